//! Quantifier and cardinal scenario datasets.
//!
//! A scenario is a scene of at most nine object vectors: `numerator` copies of
//! the target concept plus `denominator - numerator` distinct distractors,
//! each distractor less similar to the target than the inventory's mean
//! pairwise cosine. Scenes are either summed into one `d`-dim vector or laid
//! out in nine cells and PCA-reduced.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::concept::ConceptInventory;
use crate::par::{self, derive_seed, Execution};
use crate::vecmath::{self, PcaModel, VecMathError};

/// Scenes hold at most this many objects.
pub const MAX_OBJECTS: usize = 9;

/// Componentwise tolerance for recomposing a stored scene vector.
pub const RECOMPOSITION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid combination {numerator}/{denominator}: need 0 <= targets <= total <= {MAX_OBJECTS} and total >= 1")]
    InvalidCombination { numerator: usize, denominator: usize },
    #[error("combination {0} is exactly one half, which no quantifier band covers")]
    ExactHalf(Combination),
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
    #[error("target {target:?} needs {needed} distractors below the mean similarity but only {available} are eligible (short by {})", needed - available)]
    InsufficientDistractors {
        target: String,
        needed: usize,
        available: usize,
    },
    #[error("expression {expression} does not belong to a {kind} dataset")]
    KindMismatch { expression: Expression, kind: QuantKind },
    #[error("concat PCA: {0}")]
    Pca(VecMathError),
    #[error("unknown {what} {value:?}")]
    Parse { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantKind {
    Quantifier,
    Cardinal,
}

impl QuantKind {
    pub const ALL: [QuantKind; 2] = [QuantKind::Quantifier, QuantKind::Cardinal];

    pub fn as_str(self) -> &'static str {
        match self {
            QuantKind::Quantifier => "quantifier",
            QuantKind::Cardinal => "cardinal",
        }
    }

    pub fn expressions(self) -> [Expression; 4] {
        use Expression::*;
        match self {
            QuantKind::Quantifier => [No, Few, Most, All],
            QuantKind::Cardinal => [One, Two, Three, Four],
        }
    }
}

impl fmt::Display for QuantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantKind {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quantifier" => Ok(QuantKind::Quantifier),
            "cardinal" => Ok(QuantKind::Cardinal),
            _ => Err(ScenarioError::Parse {
                what: "dataset kind",
                value: s.to_string(),
            }),
        }
    }
}

/// A quantified expression. The first four are quantifiers ordered on the
/// proportion scale, the last four cardinals in the subitizing range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expression {
    No,
    Few,
    Most,
    All,
    One,
    Two,
    Three,
    Four,
}

impl Expression {
    pub const ALL: [Expression; 8] = [
        Expression::No,
        Expression::Few,
        Expression::Most,
        Expression::All,
        Expression::One,
        Expression::Two,
        Expression::Three,
        Expression::Four,
    ];

    pub fn kind(self) -> QuantKind {
        match self {
            Expression::No | Expression::Few | Expression::Most | Expression::All => QuantKind::Quantifier,
            _ => QuantKind::Cardinal,
        }
    }

    /// Position on the expression's ordered scale (0..4).
    pub fn rank(self) -> usize {
        self as usize % 4
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Expression::No => "no",
            Expression::Few => "few",
            Expression::Most => "most",
            Expression::All => "all",
            Expression::One => "one",
            Expression::Two => "two",
            Expression::Three => "three",
            Expression::Four => "four",
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Expression {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| ScenarioError::Parse {
                what: "expression",
                value: s.to_string(),
            })
    }
}

/// `numerator` targets out of `denominator` objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combination {
    numerator: usize,
    denominator: usize,
}

impl Combination {
    pub fn new(numerator: usize, denominator: usize) -> Result<Self, ScenarioError> {
        if denominator == 0 || denominator > MAX_OBJECTS || numerator > denominator {
            return Err(ScenarioError::InvalidCombination {
                numerator,
                denominator,
            });
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    pub fn numerator(self) -> usize {
        self.numerator
    }

    pub fn denominator(self) -> usize {
        self.denominator
    }

    pub fn distractors(self) -> usize {
        self.denominator - self.numerator
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

const fn c(numerator: usize, denominator: usize) -> Combination {
    Combination {
        numerator,
        denominator,
    }
}

/// Quantifier label for a target ratio: 0 is `no`, below one half `few`,
/// above one half `most`, 1 is `all`. Exactly one half is rejected.
pub fn classify_ratio(combo: Combination) -> Result<Expression, ScenarioError> {
    let (n, d) = (combo.numerator, combo.denominator);
    Ok(if n == 0 {
        Expression::No
    } else if n == d {
        Expression::All
    } else if 2 * n < d {
        Expression::Few
    } else if 2 * n > d {
        Expression::Most
    } else {
        return Err(ScenarioError::ExactHalf(combo));
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(ScenarioError::Parse {
                what: "split",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompositionMode {
    #[default]
    Summed,
    Concat,
}

impl CompositionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CompositionMode::Summed => "summed",
            CompositionMode::Concat => "concat",
        }
    }
}

impl FromStr for CompositionMode {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summed" => Ok(CompositionMode::Summed),
            "concat" => Ok(CompositionMode::Concat),
            _ => Err(ScenarioError::Parse {
                what: "composition mode",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComboEntry {
    pub expression: Expression,
    pub train: Vec<Combination>,
    pub test: Vec<Combination>,
}

impl ComboEntry {
    pub fn combos(&self, split: Split) -> &[Combination] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComboTable {
    pub kind: QuantKind,
    pub entries: Vec<ComboEntry>,
}

impl ComboTable {
    pub fn entry(&self, expression: Expression) -> Option<&ComboEntry> {
        self.entries.iter().find(|e| e.expression == expression)
    }

    /// Scenarios generated per concept.
    pub fn per_concept(&self) -> usize {
        self.entries.iter().map(|e| e.train.len() + e.test.len()).sum()
    }

    pub fn per_concept_in(&self, split: Split) -> usize {
        self.entries.iter().map(|e| e.combos(split).len()).sum()
    }

    /// Every (expression, combination, split) cell in generation order.
    pub fn cells(&self) -> Vec<(Expression, Combination, Split)> {
        let mut out = Vec::with_capacity(self.per_concept());
        for e in &self.entries {
            out.extend(e.train.iter().map(|&c| (e.expression, c, Split::Train)));
            out.extend(e.test.iter().map(|&c| (e.expression, c, Split::Test)));
        }
        out
    }
}

/// The train/test combinations used for both datasets.
pub fn default_combo_table(kind: QuantKind) -> ComboTable {
    use Expression::*;
    let rows: [(Expression, [Combination; 4], [Combination; 2]); 4] = match kind {
        QuantKind::Quantifier => [
            (No, [c(0, 1), c(0, 2), c(0, 3), c(0, 4)], [c(0, 5), c(0, 8)]),
            (Few, [c(1, 6), c(2, 5), c(2, 7), c(3, 8)], [c(1, 7), c(4, 9)]),
            (Most, [c(2, 3), c(3, 4), c(3, 5), c(4, 5)], [c(4, 6), c(6, 8)]),
            (All, [c(1, 1), c(2, 2), c(3, 3), c(4, 4)], [c(5, 5), c(9, 9)]),
        ],
        QuantKind::Cardinal => [
            (One, [c(1, 1), c(1, 3), c(1, 4), c(1, 6)], [c(1, 2), c(1, 7)]),
            (Two, [c(2, 2), c(2, 3), c(2, 5), c(2, 7)], [c(2, 4), c(2, 9)]),
            (Three, [c(3, 3), c(3, 4), c(3, 5), c(3, 8)], [c(3, 7), c(3, 9)]),
            (Four, [c(4, 4), c(4, 5), c(4, 6), c(4, 7)], [c(4, 8), c(4, 9)]),
        ],
    };
    ComboTable {
        kind,
        entries: rows
            .into_iter()
            .map(|(expression, train, test)| ComboEntry {
                expression,
                train: train.to_vec(),
                test: test.to_vec(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub target: String,
    pub combination: Combination,
    pub expression: Expression,
    pub split: Split,
    pub vector: Vec<f64>,
    pub distractors: Vec<String>,
}

/// Concepts that may serve as distractors for `target`.
pub fn eligible_distractors(inventory: &ConceptInventory, target: usize) -> Vec<usize> {
    let threshold = inventory.mean_pairwise_cosine();
    let concepts = inventory.concepts();
    let t = &concepts[target].visual;
    (0..concepts.len())
        .filter(|&j| {
            j != target
                && vecmath::cosine(t, &concepts[j].visual).expect("unit visual vectors") < threshold
        })
        .collect()
}

/// Summed composition: `numerator * target + sum(distractors)`.
pub fn compose_summed(inventory: &ConceptInventory, target: usize, numerator: usize, distractors: &[usize]) -> Vec<f64> {
    let concepts = inventory.concepts();
    let mut v = vecmath::scale(&concepts[target].visual, numerator as f64);
    for &d in distractors {
        vecmath::axpy(&mut v, 1.0, &concepts[d].visual);
    }
    v
}

/// Nine-cell layout, targets first then distractors, empty cells zero.
pub fn compose_concat(inventory: &ConceptInventory, target: usize, numerator: usize, distractors: &[usize]) -> Vec<f64> {
    let dim = inventory.dim();
    let concepts = inventory.concepts();
    let mut v = Vec::with_capacity(MAX_OBJECTS * dim);
    for _ in 0..numerator {
        v.extend_from_slice(&concepts[target].visual);
    }
    for &d in distractors {
        v.extend_from_slice(&concepts[d].visual);
    }
    v.resize(MAX_OBJECTS * dim, 0.0);
    v
}

fn sample_distractors(
    inventory: &ConceptInventory,
    target: usize,
    combo: Combination,
    seed: u64,
) -> Result<Vec<usize>, ScenarioError> {
    let needed = combo.distractors();
    if needed == 0 {
        return Ok(Vec::new());
    }
    let eligible = eligible_distractors(inventory, target);
    if eligible.len() < needed {
        return Err(ScenarioError::InsufficientDistractors {
            target: inventory.concepts()[target].name.clone(),
            needed,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, eligible.len(), needed)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

/// Builds one scenario. In concat mode the returned vector is the raw
/// `9 * d` cell layout; [`build_dataset`] reduces it.
pub fn build_scenario(
    inventory: &ConceptInventory,
    target: &str,
    combo: Combination,
    expression: Expression,
    split: Split,
    mode: CompositionMode,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    let t = inventory
        .position(target)
        .ok_or_else(|| ScenarioError::UnknownConcept(target.to_string()))?;
    let picks = sample_distractors(inventory, t, combo, seed)?;
    let vector = match mode {
        CompositionMode::Summed => compose_summed(inventory, t, combo.numerator, &picks),
        CompositionMode::Concat => compose_concat(inventory, t, combo.numerator, &picks),
    };
    let names = inventory.concepts();
    Ok(Scenario {
        target: target.to_string(),
        combination: combo,
        expression,
        split,
        vector,
        distractors: picks.into_iter().map(|i| names[i].name.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: QuantKind,
    pub mode: CompositionMode,
    pub scenarios: Vec<Scenario>,
    pub table: ComboTable,
    /// Present in concat mode: maps raw cell layouts to scene space.
    pub concat_pca: Option<PcaModel>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &Scenario)> {
        self.scenarios
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Raw (pre-PCA) layout of a stored scenario, if it is concat-mode.
    pub fn raw_vector(&self, inventory: &ConceptInventory, scenario: &Scenario) -> Result<Vec<f64>, ScenarioError> {
        let t = inventory
            .position(&scenario.target)
            .ok_or_else(|| ScenarioError::UnknownConcept(scenario.target.clone()))?;
        let picks = scenario
            .distractors
            .iter()
            .map(|d| inventory.position(d).ok_or_else(|| ScenarioError::UnknownConcept(d.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(match self.mode {
            CompositionMode::Summed => compose_summed(inventory, t, scenario.combination.numerator, &picks),
            CompositionMode::Concat => compose_concat(inventory, t, scenario.combination.numerator, &picks),
        })
    }

    /// The vector a scene is compared against for its target concept: the
    /// visual centroid in summed mode, or the reduced single-target layout in
    /// concat mode.
    pub fn target_reference(&self, inventory: &ConceptInventory, target: &str) -> Result<Vec<f64>, ScenarioError> {
        let t = inventory
            .position(target)
            .ok_or_else(|| ScenarioError::UnknownConcept(target.to_string()))?;
        match (&self.concat_pca, self.mode) {
            (Some(pca), CompositionMode::Concat) => pca
                .transform(&compose_concat(inventory, t, 1, &[]))
                .map_err(ScenarioError::Pca),
            _ => Ok(inventory.concepts()[t].visual.clone()),
        }
    }
}

fn kind_tag(kind: QuantKind) -> u64 {
    match kind {
        QuantKind::Quantifier => 0x51,
        QuantKind::Cardinal => 0xC4,
    }
}

pub fn build_dataset(
    inventory: &ConceptInventory,
    kind: QuantKind,
    mode: CompositionMode,
    seed: u64,
) -> Result<Dataset, ScenarioError> {
    build_dataset_with(inventory, kind, mode, seed, Execution::default())
}

/// One scenario per (concept, expression, combination) over the default
/// table. Distractor draws are seeded per (seed, kind, concept, cell) so the
/// result is independent of `exec`.
pub fn build_dataset_with(
    inventory: &ConceptInventory,
    kind: QuantKind,
    mode: CompositionMode,
    seed: u64,
    exec: Execution,
) -> Result<Dataset, ScenarioError> {
    let table = default_combo_table(kind);
    let cells = table.cells();
    let names = inventory.concepts();
    let per_concept = par::try_map_range(exec, names.len(), |ci| {
        cells
            .iter()
            .enumerate()
            .map(|(cell, &(expression, combo, split))| {
                let s = derive_seed(seed, &[kind_tag(kind), ci as u64, cell as u64]);
                build_scenario(inventory, &names[ci].name, combo, expression, split, mode, s)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut scenarios: Vec<Scenario> = per_concept.into_iter().flatten().collect();

    let concat_pca = if mode == CompositionMode::Concat {
        let train_raw: Vec<Vec<f64>> = scenarios
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.vector.clone())
            .collect();
        let pca = vecmath::pca_fit(&train_raw, inventory.dim()).map_err(ScenarioError::Pca)?;
        let reduced = par::map_slice(exec, &scenarios, |s| pca.transform(&s.vector));
        for (s, r) in scenarios.iter_mut().zip(reduced) {
            s.vector = r.map_err(ScenarioError::Pca)?;
        }
        Some(pca)
    } else {
        None
    };

    Ok(Dataset {
        kind,
        mode,
        scenarios,
        table,
        concat_pca,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub scenario: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scenario {
            Some(i) => write!(f, "scenario {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn global(&mut self, message: String) {
        self.violations.push(Violation { scenario: None, message });
    }

    fn at(&mut self, index: usize, s: &Scenario, message: String) {
        self.violations.push(Violation {
            scenario: Some(index),
            message: format!("{} {} {} {}: {message}", s.split, s.expression, s.target, s.combination),
        });
    }
}

/// Rechecks every dataset and scenario invariant against the inventory.
pub fn validate_dataset(ds: &Dataset, inventory: &ConceptInventory) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = inventory.len();
    let table = &ds.table;

    let expected_total = table.per_concept() * n;
    if ds.scenarios.len() != expected_total {
        report.global(format!("expected {expected_total} scenarios, found {}", ds.scenarios.len()));
    }
    for split in [Split::Train, Split::Test] {
        let expected = table.per_concept_in(split) * n;
        let found = ds.count(split);
        if found != expected {
            report.global(format!("expected {expected} {split} scenarios, found {found}"));
        }
    }

    // split disjointness over (expression, combination)
    let mut placement: HashMap<(Expression, Combination), BTreeSet<Split>> = HashMap::new();
    for e in &table.entries {
        for split in [Split::Train, Split::Test] {
            for &combo in e.combos(split) {
                placement.entry((e.expression, combo)).or_default().insert(split);
            }
        }
    }
    let mut overlap: Vec<_> = placement
        .iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|((e, c), _)| format!("{e} {c}"))
        .collect();
    overlap.sort();
    for o in overlap {
        report.global(format!("{o} appears in both train and test"));
    }

    let mut seen: BTreeMap<(String, Expression, Combination), usize> = BTreeMap::new();
    let threshold = inventory.mean_pairwise_cosine();
    let dim = inventory.dim();
    for (i, s) in ds.scenarios.iter().enumerate() {
        if s.expression.kind() != ds.kind {
            report.at(i, s, format!("expression does not belong to a {} dataset", ds.kind));
        }
        match table.entry(s.expression) {
            Some(entry) if entry.combos(s.split).contains(&s.combination) => {}
            _ => report.at(i, s, "combination not in the table for this expression and split".into()),
        }
        if let Some(prev) = seen.insert((s.target.clone(), s.expression, s.combination), i) {
            report.at(i, s, format!("duplicate of scenario {prev}"));
        }
        if s.vector.len() != dim || s.vector.iter().any(|x| !x.is_finite()) {
            report.at(i, s, format!("vector must have {dim} finite components"));
            continue;
        }
        let Some(t) = inventory.position(&s.target) else {
            report.at(i, s, "target is not in the inventory".into());
            continue;
        };
        if s.distractors.len() != s.combination.distractors() {
            report.at(
                i,
                s,
                format!("expected {} distractors, found {}", s.combination.distractors(), s.distractors.len()),
            );
        }
        let unique: BTreeSet<&String> = s.distractors.iter().collect();
        if unique.len() != s.distractors.len() {
            report.at(i, s, "distinct distractors required".into());
        }
        let mut resolvable = true;
        for d in &s.distractors {
            if *d == s.target {
                report.at(i, s, "target used as its own distractor".into());
            }
            match inventory.get(d) {
                None => {
                    report.at(i, s, format!("distractor {d:?} not in the inventory"));
                    resolvable = false;
                }
                Some(dc) => {
                    let cos = vecmath::cosine(&inventory.concepts()[t].visual, &dc.visual).expect("unit vectors");
                    if cos >= threshold {
                        report.at(
                            i,
                            s,
                            format!("distractor {d:?} has cosine {cos} >= mean pairwise cosine {threshold}"),
                        );
                    }
                }
            }
        }
        if !resolvable {
            continue;
        }
        let expected = match ds.raw_vector(inventory, s) {
            Ok(raw) => match (&ds.concat_pca, ds.mode) {
                (_, CompositionMode::Summed) => Some(raw),
                (Some(pca), CompositionMode::Concat) => pca.transform(&raw).ok(),
                (None, CompositionMode::Concat) => None,
            },
            Err(_) => None,
        };
        match expected {
            Some(e) => {
                let worst = e
                    .iter()
                    .zip(&s.vector)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if worst > RECOMPOSITION_TOL {
                    report.at(i, s, format!("recomposition mismatch: max deviation {worst:e}"));
                }
            }
            None if ds.mode == CompositionMode::Concat => {
                report.at(i, s, "concat dataset lacks its PCA, cannot recompose".into())
            }
            None => {}
        }
    }

    // every (concept, expression, combination) triple present
    for concept in inventory.concepts() {
        for (e, combo, _) in table.cells() {
            if !seen.contains_key(&(concept.name.clone(), e, combo)) {
                report.global(format!("missing scenario {} {e} {combo}", concept.name));
            }
        }
    }
    report
}
