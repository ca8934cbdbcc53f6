//! Concept inventories: one unit visual vector and one word vector per concept.
//!
//! Inventories are either synthesized from a seeded isotropic Gaussian or
//! ingested from externally extracted feature tables, in which case both
//! modalities are PCA-reduced to the working dimension.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::formats::{self, FormatError, VectorTable};
use crate::par::derive_seed;
use crate::vecmath::{self, VecMathError};

/// Smallest inventory that can fill a 9-cell scene with distinct distractors.
pub const MIN_CONCEPTS: usize = 10;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("invalid concept name {0:?}: names must be non-empty and free of tabs, commas and newlines")]
    BadName(String),
    #[error("duplicate concept name {0:?}")]
    DuplicateName(String),
    #[error("concept {name:?}: {source}")]
    BadVector { name: String, source: VecMathError },
    #[error("visual vector of {0:?} is not unit norm")]
    NotUnitNorm(String),
    #[error("visual and word tables disagree on concept names; missing from word table: [{missing_in_word}]; missing from visual table: [{missing_in_visual}]")]
    NameMismatch {
        missing_in_word: String,
        missing_in_visual: String,
    },
    #[error("need at least {needed} concepts, got {got}")]
    TooFewConcepts { needed: usize, got: usize },
    #[error("{modality} PCA: {source}")]
    Pca {
        modality: &'static str,
        source: VecMathError,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WordMode {
    #[default]
    Correlated,
    Independent,
}

impl WordMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WordMode::Correlated => "correlated",
            WordMode::Independent => "independent",
        }
    }
}

impl std::str::FromStr for WordMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "correlated" => Ok(WordMode::Correlated),
            "independent" => Ok(WordMode::Independent),
            other => Err(format!("unknown word mode {other:?} (expected correlated|independent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub concept_count: usize,
    pub dim: usize,
    pub word_mode: WordMode,
    pub word_noise: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            concept_count: 188,
            dim: 100,
            word_mode: WordMode::Correlated,
            word_noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), ConceptError> {
        if self.concept_count < MIN_CONCEPTS {
            return Err(ConceptError::InvalidConfig(format!(
                "concept_count must be at least {MIN_CONCEPTS}, got {}",
                self.concept_count
            )));
        }
        if self.dim == 0 {
            return Err(ConceptError::InvalidConfig("dim must be positive".into()));
        }
        if !(self.word_noise.is_finite() && self.word_noise >= 0.0) {
            return Err(ConceptError::InvalidConfig(format!(
                "word_noise must be a finite non-negative number, got {}",
                self.word_noise
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub name: String,
    /// Unit-norm visual centroid.
    pub visual: Vec<f64>,
    pub word: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptInventory {
    concepts: Vec<Concept>,
    index: HashMap<String, usize>,
    dim: usize,
    mean_pairwise_cosine: f64,
}

pub(crate) fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.contains(['\t', ',', '\n', '\r'])
}

impl ConceptInventory {
    /// Assembles an inventory, enforcing name uniqueness and unit visual norm.
    pub fn new(concepts: Vec<Concept>) -> Result<Self, ConceptError> {
        if concepts.len() < 2 {
            return Err(ConceptError::TooFewConcepts {
                needed: 2,
                got: concepts.len(),
            });
        }
        let dim = concepts[0].visual.len();
        let mut index = HashMap::with_capacity(concepts.len());
        for (i, c) in concepts.iter().enumerate() {
            if !valid_name(&c.name) {
                return Err(ConceptError::BadName(c.name.clone()));
            }
            if index.insert(c.name.clone(), i).is_some() {
                return Err(ConceptError::DuplicateName(c.name.clone()));
            }
            let bad = |source| ConceptError::BadVector {
                name: c.name.clone(),
                source,
            };
            vecmath::check_vector(&c.visual).map_err(bad)?;
            vecmath::check_vector(&c.word).map_err(bad)?;
            if c.visual.len() != dim || c.word.len() != dim {
                return Err(bad(VecMathError::DimensionMismatch {
                    left: dim,
                    right: if c.visual.len() != dim { c.visual.len() } else { c.word.len() },
                }));
            }
            if (vecmath::norm(&c.visual) - 1.0).abs() > 1e-9 {
                return Err(ConceptError::NotUnitNorm(c.name.clone()));
            }
        }
        let mean_pairwise_cosine = pairwise_mean(&concepts);
        Ok(Self {
            concepts,
            index,
            dim,
            mean_pairwise_cosine,
        })
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean_pairwise_cosine(&self) -> f64 {
        self.mean_pairwise_cosine
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Concept> {
        self.position(name).map(|i| &self.concepts[i])
    }

    pub fn visual_table(&self) -> VectorTable {
        VectorTable {
            dim: self.dim,
            rows: self
                .concepts
                .iter()
                .map(|c| (c.name.clone(), c.visual.clone()))
                .collect(),
        }
    }

    pub fn word_table(&self) -> VectorTable {
        VectorTable {
            dim: self.dim,
            rows: self
                .concepts
                .iter()
                .map(|c| (c.name.clone(), c.word.clone()))
                .collect(),
        }
    }

    /// Rebuilds an inventory from already-processed tables (no PCA).
    pub fn from_tables(visual: VectorTable, word: VectorTable) -> Result<Self, ConceptError> {
        check_same_names(&visual, &word)?;
        let words: HashMap<String, Vec<f64>> = word.rows.into_iter().collect();
        let concepts = visual
            .rows
            .into_iter()
            .map(|(name, visual)| {
                let word = words[&name].clone();
                Concept { name, visual, word }
            })
            .collect();
        Self::new(concepts)
    }
}

fn pairwise_mean(concepts: &[Concept]) -> f64 {
    let n = concepts.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += vecmath::cosine(&concepts[i].visual, &concepts[j].visual)
                .expect("visual vectors are unit norm");
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Mean cosine over all unordered pairs of visual vectors.
pub fn mean_pairwise_cosine(inventory: &ConceptInventory) -> f64 {
    inventory.mean_pairwise_cosine()
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(u) = vecmath::normalize(&v) {
            return u;
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of R's diagonal folded into Q.
fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn synthesize_inventory(cfg: &SynthesisConfig) -> Result<ConceptInventory, ConceptError> {
    cfg.validate()?;
    let mut visual_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut word_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let width = cfg.concept_count.to_string().len().max(3);

    let visuals: Vec<Vec<f64>> = (0..cfg.concept_count)
        .map(|_| gaussian_unit(&mut visual_rng, cfg.dim))
        .collect();

    let words: Vec<Vec<f64>> = match cfg.word_mode {
        WordMode::Correlated => {
            let q = random_orthogonal(&mut word_rng, cfg.dim);
            visuals
                .iter()
                .map(|v| {
                    let rotated = &q * nalgebra::DVector::from_column_slice(v);
                    let noisy: Vec<f64> = rotated
                        .iter()
                        .map(|x| {
                            let eta: f64 = StandardNormal.sample(&mut word_rng);
                            x + cfg.word_noise * eta
                        })
                        .collect();
                    vecmath::normalize(&noisy).unwrap_or_else(|_| rotated.iter().copied().collect())
                })
                .collect()
        }
        WordMode::Independent => (0..cfg.concept_count)
            .map(|_| gaussian_unit(&mut word_rng, cfg.dim))
            .collect(),
    };

    let concepts = visuals
        .into_iter()
        .zip(words)
        .enumerate()
        .map(|(i, (visual, word))| Concept {
            name: format!("concept_{i:0width$}"),
            visual,
            word,
        })
        .collect();
    ConceptInventory::new(concepts)
}

fn check_same_names(visual: &VectorTable, word: &VectorTable) -> Result<(), ConceptError> {
    let v: BTreeSet<&str> = visual.rows.iter().map(|(n, _)| n.as_str()).collect();
    let w: BTreeSet<&str> = word.rows.iter().map(|(n, _)| n.as_str()).collect();
    if v != w {
        let join = |s: Vec<&str>| s.join(", ");
        return Err(ConceptError::NameMismatch {
            missing_in_word: join(v.difference(&w).copied().collect()),
            missing_in_visual: join(w.difference(&v).copied().collect()),
        });
    }
    Ok(())
}

/// Replays the centroid preprocessing on external feature tables: visual
/// vectors are PCA-reduced then unit-normalized; word vectors are
/// PCA-reduced only. The two PCAs are fitted separately.
pub fn ingest_tables(
    visual: &VectorTable,
    word: &VectorTable,
    target_dim: usize,
) -> Result<ConceptInventory, ConceptError> {
    check_same_names(visual, word)?;
    if visual.rows.len() < MIN_CONCEPTS {
        return Err(ConceptError::TooFewConcepts {
            needed: MIN_CONCEPTS,
            got: visual.rows.len(),
        });
    }
    let word_by_name: HashMap<&str, &Vec<f64>> =
        word.rows.iter().map(|(n, v)| (n.as_str(), v)).collect();

    let visual_rows: Vec<Vec<f64>> = visual.rows.iter().map(|(_, v)| v.clone()).collect();
    let word_rows: Vec<Vec<f64>> = visual
        .rows
        .iter()
        .map(|(n, _)| word_by_name[n.as_str()].clone())
        .collect();

    let visual_pca = vecmath::pca_fit(&visual_rows, target_dim).map_err(|source| ConceptError::Pca {
        modality: "visual",
        source,
    })?;
    let word_pca = vecmath::pca_fit(&word_rows, target_dim).map_err(|source| ConceptError::Pca {
        modality: "word",
        source,
    })?;

    let mut concepts = Vec::with_capacity(visual_rows.len());
    for (((name, _), v), w) in visual.rows.iter().zip(&visual_rows).zip(&word_rows) {
        let bad = |source| ConceptError::BadVector {
            name: name.clone(),
            source,
        };
        let reduced = visual_pca.transform(v).map_err(bad)?;
        let visual = vecmath::normalize(&reduced).map_err(bad)?;
        let word = word_pca.transform(w).map_err(bad)?;
        concepts.push(Concept {
            name: name.clone(),
            visual,
            word,
        });
    }
    ConceptInventory::new(concepts)
}

pub fn ingest_inventory(
    visual_file: &Path,
    word_file: &Path,
    target_dim: usize,
) -> Result<ConceptInventory, ConceptError> {
    let visual = formats::read_vector_table(visual_file)?;
    let word = formats::read_vector_table(word_file)?;
    ingest_tables(&visual, &word, target_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> SynthesisConfig {
        SynthesisConfig {
            seed,
            ..SynthesisConfig::default()
        }
    }

    fn brute_force_mean(inv: &ConceptInventory) -> f64 {
        let c = inv.concepts();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..c.len() {
            for j in 0..c.len() {
                if i < j {
                    total += vecmath::cosine(&c[i].visual, &c[j].visual).unwrap();
                    pairs += 1;
                }
            }
        }
        total / pairs as f64
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synthesize_inventory(&cfg(42)).unwrap();
        let b = synthesize_inventory(&cfg(42)).unwrap();
        assert_eq!(a, b);
        let c = synthesize_inventory(&cfg(43)).unwrap();
        assert_ne!(a.concepts()[0].visual, c.concepts()[0].visual);
    }

    #[test]
    fn default_inventory_shape() {
        let inv = synthesize_inventory(&cfg(1)).unwrap();
        assert_eq!(inv.len(), 188);
        assert_eq!(inv.dim(), 100);
        for c in inv.concepts() {
            assert!((vecmath::norm(&c.visual) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_correlated_words_preserve_geometry() {
        let inv = synthesize_inventory(&SynthesisConfig {
            concept_count: 30,
            dim: 20,
            word_noise: 0.0,
            seed: 5,
            ..SynthesisConfig::default()
        })
        .unwrap();
        let c = inv.concepts();
        for i in 0..c.len() {
            let mut best_visual = (usize::MAX, f64::MIN);
            let mut best_word = (usize::MAX, f64::MIN);
            for j in 0..c.len() {
                if i == j {
                    continue;
                }
                let cv = vecmath::cosine(&c[i].visual, &c[j].visual).unwrap();
                let cw = vecmath::cosine(&c[i].word, &c[j].word).unwrap();
                assert!((cv - cw).abs() < 1e-9);
                if cv > best_visual.1 {
                    best_visual = (j, cv);
                }
                if cw > best_word.1 {
                    best_word = (j, cw);
                }
            }
            assert_eq!(best_visual.0, best_word.0);
        }
    }

    #[test]
    fn independent_words_are_unit_and_uncorrelated() {
        let inv = synthesize_inventory(&SynthesisConfig {
            word_mode: WordMode::Independent,
            seed: 9,
            ..SynthesisConfig::default()
        })
        .unwrap();
        let mean_match: f64 = inv
            .concepts()
            .iter()
            .map(|c| vecmath::cosine(&c.visual, &c.word).unwrap())
            .sum::<f64>()
            / inv.len() as f64;
        assert!(mean_match.abs() < 0.05);
        assert!(inv.concepts().iter().all(|c| (vecmath::norm(&c.word) - 1.0).abs() < 1e-9));
    }

    #[test]
    fn mean_pairwise_cosine_matches_brute_force() {
        for seed in 0..5 {
            let inv = synthesize_inventory(&cfg(seed)).unwrap();
            let m = mean_pairwise_cosine(&inv);
            assert!((m - brute_force_mean(&inv)).abs() < 1e-12);
            assert!(m > -0.05 && m < 0.05, "seed {seed}: {m}");
        }
    }

    #[test]
    fn mean_pairwise_cosine_small_cases() {
        let c = |name: &str, v: Vec<f64>| Concept {
            name: name.into(),
            word: v.clone(),
            visual: v,
        };
        let twins = ConceptInventory::new(vec![c("a", vec![0.6, 0.8]), c("b", vec![0.6, 0.8])]).unwrap();
        assert!((mean_pairwise_cosine(&twins) - 1.0).abs() < 1e-12);
        let axes = ConceptInventory::new(vec![
            c("x", vec![1.0, 0.0, 0.0]),
            c("y", vec![0.0, 1.0, 0.0]),
            c("z", vec![0.0, 0.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(mean_pairwise_cosine(&axes), 0.0);
        assert!(matches!(
            ConceptInventory::new(vec![c("solo", vec![1.0])]),
            Err(ConceptError::TooFewConcepts { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let small = SynthesisConfig {
            concept_count: 9,
            ..SynthesisConfig::default()
        };
        assert!(matches!(small.validate(), Err(ConceptError::InvalidConfig(_))));
        let noisy = SynthesisConfig {
            word_noise: -1.0,
            ..SynthesisConfig::default()
        };
        assert!(noisy.validate().is_err());
    }

    #[test]
    fn inventory_rejects_bad_names() {
        let v = vec![1.0, 0.0];
        let mk = |n: &str| Concept {
            name: n.into(),
            visual: v.clone(),
            word: v.clone(),
        };
        assert!(matches!(
            ConceptInventory::new(vec![mk("a"), mk("a")]),
            Err(ConceptError::DuplicateName(_))
        ));
        assert!(matches!(
            ConceptInventory::new(vec![mk("a,b"), mk("c")]),
            Err(ConceptError::BadName(_))
        ));
        assert!(matches!(
            ConceptInventory::new(vec![mk(""), mk("c")]),
            Err(ConceptError::BadName(_))
        ));
    }

    /// Zero-mean unit-norm vectors: PCA at full dimension is a pure rotation.
    fn symmetric_table(n_half: usize, dim: usize, seed: u64) -> VectorTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for i in 0..n_half {
            let u = gaussian_unit(&mut rng, dim);
            rows.push((format!("p{i}"), u.clone()));
            rows.push((format!("n{i}"), vecmath::scale(&u, -1.0)));
        }
        VectorTable { dim, rows }
    }

    #[test]
    fn ingest_preserves_pairwise_cosines_of_centred_unit_input() {
        let visual = symmetric_table(12, 8, 3);
        let word = symmetric_table(12, 8, 4);
        let inv = ingest_tables(&visual, &word, 8).unwrap();
        assert_eq!(inv.dim(), 8);
        for (i, (ni, vi)) in visual.rows.iter().enumerate() {
            for (nj, vj) in visual.rows.iter().skip(i + 1) {
                let before = vecmath::cosine(vi, vj).unwrap();
                let after = vecmath::cosine(&inv.get(ni).unwrap().visual, &inv.get(nj).unwrap().visual).unwrap();
                assert!((before - after).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ingest_reduces_to_target_dim_and_keeps_word_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let names: Vec<String> = (0..40).map(|i| format!("c{i}")).collect();
        let mk = |dim: usize, rng: &mut ChaCha8Rng| VectorTable {
            dim,
            rows: names
                .iter()
                .map(|n| (n.clone(), (0..dim).map(|_| { let z: f64 = StandardNormal.sample(rng); 3.0 * z }).collect()))
                .collect(),
        };
        let visual = mk(64, &mut rng);
        let word = mk(30, &mut rng);
        let inv = ingest_tables(&visual, &word, 10).unwrap();
        assert_eq!(inv.dim(), 10);
        assert!(inv.concepts().iter().all(|c| (vecmath::norm(&c.visual) - 1.0).abs() < 1e-9));
        // word vectors are reduced but not renormalized
        assert!(inv.concepts().iter().any(|c| (vecmath::norm(&c.word) - 1.0).abs() > 0.1));
    }

    #[test]
    fn ingest_reports_missing_names() {
        let visual = symmetric_table(6, 4, 1);
        let mut word = visual.clone();
        let dropped = word.rows.pop().unwrap().0;
        let err = ingest_tables(&visual, &word, 4).unwrap_err();
        assert!(err.to_string().contains(&dropped), "{err}");
    }
}
