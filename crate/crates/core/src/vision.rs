//! Only-vision analysis: how well a single similarity between the target
//! and its scene separates the quantified expressions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::concept::ConceptInventory;
use crate::par::{self, derive_seed, Execution};
use crate::scenario::{Dataset, Expression, QuantKind, ScenarioError, Split};
use crate::svm::{self, SvmError, SvmParams};
use crate::vecmath::{self, VecMathError};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("split {0} has no scenarios")]
    EmptySplit(Split),
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("similarity: {0}")]
    Similarity(#[from] VecMathError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("SVM ({kind}, {measure}): {source}")]
    Svm {
        kind: QuantKind,
        measure: Measure,
        source: SvmError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    CosineDistance,
    Dot,
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::CosineDistance, Measure::Dot];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::CosineDistance => "cosine_distance",
            Measure::Dot => "dot",
        }
    }

    pub fn apply(self, target: &[f64], scene: &[f64]) -> Result<f64, VecMathError> {
        match self {
            Measure::CosineDistance => vecmath::cosine_distance(target, scene),
            Measure::Dot => vecmath::dot(target, scene),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine_distance" | "cosine" => Ok(Measure::CosineDistance),
            "dot" => Ok(Measure::Dot),
            _ => Err(format!("unknown measure {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

/// Quantile of sorted data, linear interpolation between closest ranks.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SummaryStats {
    /// Panics on empty input.
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "summary of an empty sample");
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean: values.iter().sum::<f64>() / values.len() as f64,
            count: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub stats: SummaryStats,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityProfile {
    pub kind: QuantKind,
    pub measure: Measure,
    pub split: Split,
    pub per_class: BTreeMap<Expression, ClassProfile>,
}

impl SimilarityProfile {
    pub fn median(&self, e: Expression) -> Option<f64> {
        self.per_class.get(&e).map(|p| p.stats.median)
    }
}

/// `measure(target reference, scene)` for every scenario in `split`, in
/// dataset order, with its expression.
pub fn similarity_values(
    ds: &Dataset,
    inventory: &ConceptInventory,
    measure: Measure,
    split: Split,
) -> Result<Vec<(Expression, f64)>, VisionError> {
    let mut refs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut out = Vec::new();
    for (_, s) in ds.split(split) {
        if !refs.contains_key(s.target.as_str()) {
            refs.insert(&s.target, ds.target_reference(inventory, &s.target)?);
        }
        let v = measure.apply(&refs[s.target.as_str()], &s.vector)?;
        out.push((s.expression, v));
    }
    Ok(out)
}

pub fn similarity_profile(
    ds: &Dataset,
    inventory: &ConceptInventory,
    measure: Measure,
    split: Split,
) -> Result<SimilarityProfile, VisionError> {
    let values = similarity_values(ds, inventory, measure, split)?;
    if values.is_empty() {
        return Err(VisionError::EmptySplit(split));
    }
    let mut grouped: BTreeMap<Expression, Vec<f64>> = BTreeMap::new();
    for (e, v) in values {
        grouped.entry(e).or_default().push(v);
    }
    Ok(SimilarityProfile {
        kind: ds.kind,
        measure,
        split,
        per_class: grouped
            .into_iter()
            .map(|(e, values)| {
                (
                    e,
                    ClassProfile {
                        stats: SummaryStats::from_values(&values),
                        values,
                    },
                )
            })
            .collect(),
    })
}

/// Assigns each index a fold in `0..folds`, stratified by label.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut assignment = vec![0; labels.len()];
    for (class, mut idx) in by_class {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class as u64]));
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmCell {
    pub kind: QuantKind,
    pub measure: Measure,
    pub fold_accuracies: Vec<f64>,
    /// Mean of `fold_accuracies`.
    pub cv_accuracy: f64,
    /// Fit on the full train split.
    pub train_accuracy: f64,
    /// Train-split model evaluated on the test split.
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmComparison {
    pub folds: usize,
    pub cells: Vec<SvmCell>,
}

impl SvmComparison {
    pub fn cell(&self, kind: QuantKind, measure: Measure) -> Option<&SvmCell> {
        self.cells.iter().find(|c| c.kind == kind && c.measure == measure)
    }
}

fn labelled(values: Vec<(Expression, f64)>) -> (Vec<f64>, Vec<usize>) {
    values.into_iter().map(|(e, v)| (v, e.rank())).unzip()
}

pub fn svm_cell(
    ds: &Dataset,
    inventory: &ConceptInventory,
    measure: Measure,
    folds: usize,
    seed: u64,
    params: &SvmParams,
    exec: Execution,
) -> Result<SvmCell, VisionError> {
    if folds < 2 {
        return Err(VisionError::TooFewFolds(folds));
    }
    let kind = ds.kind;
    let svm_err = |source| VisionError::Svm { kind, measure, source };
    let (x, y) = labelled(similarity_values(ds, inventory, measure, Split::Train)?);
    if x.is_empty() {
        return Err(VisionError::EmptySplit(Split::Train));
    }
    let assignment = stratified_folds(&y, folds, seed);

    let fold_accuracies = par::try_map_range(exec, folds, |f| {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..x.len() {
            if assignment[i] == f {
                vx.push(x[i]);
                vy.push(y[i]);
            } else {
                tx.push(x[i]);
                ty.push(y[i]);
            }
        }
        let model = svm::svm_train(&tx, &ty, params).map_err(svm_err)?;
        Ok::<_, VisionError>(svm::accuracy(&model, &vx, &vy))
    })?;
    let cv_accuracy = fold_accuracies.iter().sum::<f64>() / folds as f64;

    let full = svm::svm_train(&x, &y, params).map_err(svm_err)?;
    let train_accuracy = svm::accuracy(&full, &x, &y);
    let (tx, ty) = labelled(similarity_values(ds, inventory, measure, Split::Test)?);
    let test_accuracy = svm::accuracy(&full, &tx, &ty);

    Ok(SvmCell {
        kind,
        measure,
        fold_accuracies,
        cv_accuracy,
        train_accuracy,
        test_accuracy,
    })
}

pub fn svm_compare(
    ds_q: &Dataset,
    ds_c: &Dataset,
    inventory: &ConceptInventory,
    folds: usize,
    seed: u64,
) -> Result<SvmComparison, VisionError> {
    svm_compare_with(ds_q, ds_c, inventory, folds, seed, &SvmParams::default(), Execution::default())
}

/// Stratified k-fold accuracy for every (dataset kind, measure) cell.
pub fn svm_compare_with(
    ds_q: &Dataset,
    ds_c: &Dataset,
    inventory: &ConceptInventory,
    folds: usize,
    seed: u64,
    params: &SvmParams,
    exec: Execution,
) -> Result<SvmComparison, VisionError> {
    if folds < 2 {
        return Err(VisionError::TooFewFolds(folds));
    }
    let jobs: Vec<(&Dataset, Measure)> = [ds_q, ds_c]
        .into_iter()
        .flat_map(|ds| Measure::ALL.into_iter().map(move |m| (ds, m)))
        .collect();
    let cells = par::map_slice(exec, &jobs, |&(ds, m)| {
        let fold_seed = derive_seed(seed, &[ds.kind as u64]);
        svm_cell(ds, inventory, m, folds, fold_seed, params, exec)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(SvmComparison { folds, cells })
}
