//! Retrieval evaluation: each expression's model ranks the test scenarios of
//! one target concept; we score the ranking with AP and P@2 and count which
//! expressions land in the top two.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::concept::ConceptInventory;
use crate::mapping::{MappingError, MappingModel, Variant};
use crate::par::{self, Execution};
use crate::scenario::{Dataset, Expression, QuantKind, Split};
use crate::vecmath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("no relevant entries in ranked list")]
    NoRelevant,
    #[error("precision at 2 needs at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("no {variant} model for expression {expression}")]
    MissingModel { variant: Variant, expression: Expression },
    #[error("concept {concept:?}: expected {expected} relevant test scenarios for {expression}, found {found}")]
    IncompleteTest {
        concept: String,
        expression: Expression,
        expected: usize,
        found: usize,
    },
    #[error("concept {0:?} has no word vector in the inventory")]
    UnknownConcept(String),
    #[error("candidate scenario {index} does not target {concept:?}")]
    ForeignCandidate { index: usize, concept: String },
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

pub const RELEVANT_PER_QUERY: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    /// Index into the dataset's scenario list.
    pub scenario: usize,
    pub expression: Expression,
    pub score: f64,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub variant: Variant,
    pub expression: Expression,
    pub concept: String,
    pub entries: Vec<RankedEntry>,
    /// The prediction had zero norm under cosine ranking; every score is -1.
    pub degenerate: bool,
}

impl RankedList {
    pub fn relevance(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.relevant).collect()
    }
}

/// True when `a` should be ranked before `b` (ignoring the index tie-break).
fn better(variant: Variant, a: f64, b: f64) -> std::cmp::Ordering {
    match variant {
        // higher cosine first
        Variant::Lin | Variant::NnCos => b.total_cmp(&a),
        // smaller |dot - 1| first
        Variant::NnDot => a.total_cmp(&b),
    }
}

/// Scores one model's prediction for `concept` against `candidates` and sorts.
///
/// `lin`/`nn-cos` use cosine (descending); `nn-dot` uses `|dot - 1|`
/// (ascending). Ties keep dataset index order.
pub fn rank_scenarios(
    model: &MappingModel,
    inventory: &ConceptInventory,
    concept: &str,
    ds: &Dataset,
    candidates: &[usize],
) -> Result<RankedList, RetrievalError> {
    let word = &inventory
        .get(concept)
        .ok_or_else(|| RetrievalError::UnknownConcept(concept.to_string()))?
        .word;
    let pred = model.predict(word)?;
    let cosine_rule = model.variant != Variant::NnDot;
    let degenerate = cosine_rule && vecmath::norm(&pred) == 0.0;

    let mut entries = Vec::with_capacity(candidates.len());
    for &index in candidates {
        let s = &ds.scenarios[index];
        if s.target != concept {
            return Err(RetrievalError::ForeignCandidate {
                index,
                concept: concept.to_string(),
            });
        }
        let score = if degenerate {
            -1.0
        } else if cosine_rule {
            vecmath::cosine(&pred, &s.vector).unwrap_or(-1.0)
        } else {
            let d: f64 = pred.iter().zip(&s.vector).map(|(a, b)| a * b).sum();
            (d - 1.0).abs()
        };
        entries.push(RankedEntry {
            scenario: index,
            expression: s.expression,
            score,
            relevant: s.expression == model.expression,
        });
    }
    entries.sort_by(|a, b| better(model.variant, a.score, b.score).then(a.scenario.cmp(&b.scenario)));
    Ok(RankedList {
        variant: model.variant,
        expression: model.expression,
        concept: concept.to_string(),
        entries,
        degenerate,
    })
}

/// `(1/R) * sum over relevant ranks k of (relevant in top k) / k`.
pub fn average_precision(rel: &[bool]) -> Result<f64, RetrievalError> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(RetrievalError::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, _) in rel.iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (k + 1) as f64;
    }
    Ok(sum / total as f64)
}

pub fn precision_at_2(rel: &[bool]) -> Result<f64, RetrievalError> {
    if rel.len() < 2 {
        return Err(RetrievalError::TooShort(rel.len()));
    }
    Ok(rel[..2].iter().filter(|&&r| r).count() as f64 / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionScore {
    pub variant: Variant,
    pub expression: Expression,
    pub map: f64,
    pub p_at_2: f64,
    /// Per-concept AP, in concept order.
    pub ap: Vec<f64>,
}

/// Rows: query expression; columns: retrieved expression (both by rank
/// within the dataset kind).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub variant: Variant,
    pub kind: QuantKind,
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    /// Mass with `|row - col| <= 1`.
    pub fn adjacent_mass(&self) -> u64 {
        self.mass(|d| d <= 1)
    }

    /// Mass with `|row - col| == 3`.
    pub fn opposite_mass(&self) -> u64 {
        self.mass(|d| d == 3)
    }

    fn mass(&self, keep: impl Fn(usize) -> bool) -> u64 {
        let mut m = 0;
        for r in 0..4usize {
            for c in 0..4 {
                if keep(r.abs_diff(c)) {
                    m += self.counts[r][c];
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub concept_count: usize,
    pub scores: Vec<ExpressionScore>,
    pub confusions: Vec<ConfusionMatrix>,
}

impl RetrievalReport {
    pub fn score(&self, variant: Variant, expression: Expression) -> Option<&ExpressionScore> {
        self.scores
            .iter()
            .find(|s| s.variant == variant && s.expression == expression)
    }

    pub fn confusion(&self, variant: Variant, kind: QuantKind) -> Option<&ConfusionMatrix> {
        self.confusions.iter().find(|c| c.variant == variant && c.kind == kind)
    }

    pub fn variants(&self) -> Vec<Variant> {
        self.scores
            .iter()
            .map(|s| s.variant)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Mean mAP of `variant` over the four expressions of `kind`.
    pub fn mean_map(&self, variant: Variant, kind: QuantKind) -> Option<f64> {
        let maps: Vec<f64> = kind
            .expressions()
            .iter()
            .map(|&e| self.score(variant, e).map(|s| s.map))
            .collect::<Option<_>>()?;
        Some(maps.iter().sum::<f64>() / maps.len() as f64)
    }

    /// Variant with the highest mean mAP on `kind`; ties go to the earlier one.
    pub fn best_variant(&self, kind: QuantKind) -> Option<Variant> {
        let mut best: Option<(Variant, f64)> = None;
        for v in self.variants() {
            if let Some(m) = self.mean_map(v, kind) {
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((v, m));
                }
            }
        }
        best.map(|(v, _)| v)
    }

    /// Structural invariants; returns one message per violation.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let expected = (RELEVANT_PER_QUERY * self.concept_count) as u64;
        for c in &self.confusions {
            for r in 0..4 {
                if c.row_sum(r) != expected {
                    out.push(format!(
                        "{} {} confusion row {r} sums to {} (expected {expected})",
                        c.variant,
                        c.kind,
                        c.row_sum(r)
                    ));
                }
            }
        }
        for s in &self.scores {
            if !(0.0..=1.0).contains(&s.map) || !(0.0..=1.0).contains(&s.p_at_2) {
                out.push(format!("{} {} metric out of [0, 1]", s.variant, s.expression));
            }
            if s.map + 1e-12 < s.p_at_2 / 2.0 {
                out.push(format!(
                    "{} {}: mAP {} below P@2/2 = {}",
                    s.variant,
                    s.expression,
                    s.map,
                    s.p_at_2 / 2.0
                ));
            }
        }
        out
    }
}

struct QueryResult {
    ap: f64,
    p2: f64,
    top: Vec<Expression>,
}

/// Test-split candidates per concept, in order of first appearance.
fn candidate_pools(ds: &Dataset) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<String> = Vec::new();
    let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.split(Split::Test) {
        pools
            .entry(s.target.clone())
            .or_insert_with(|| {
                order.push(s.target.clone());
                Vec::new()
            })
            .push(i);
    }
    order
        .into_iter()
        .map(|c| {
            let pool = pools.remove(&c).unwrap_or_default();
            (c, pool)
        })
        .collect()
}

/// Runs every query of every variant present in `models` over each dataset.
///
/// Queries are independent and evaluated with `exec`; aggregation happens
/// afterwards in a fixed order.
pub fn evaluate(
    models: &[MappingModel],
    datasets: &[&Dataset],
    inventory: &ConceptInventory,
    exec: Execution,
) -> Result<RetrievalReport, RetrievalError> {
    let variants: Vec<Variant> = models
        .iter()
        .map(|m| m.variant)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let lookup: BTreeMap<(Variant, Expression), &MappingModel> =
        models.iter().map(|m| ((m.variant, m.expression), m)).collect();

    let mut concept_count = 0;
    let mut scores = Vec::new();
    let mut confusions = Vec::new();
    for ds in datasets {
        let pools = candidate_pools(ds);
        concept_count = concept_count.max(pools.len());
        for &variant in &variants {
            let mut counts = [[0u64; 4]; 4];
            for expression in ds.kind.expressions() {
                let model = *lookup
                    .get(&(variant, expression))
                    .ok_or(RetrievalError::MissingModel { variant, expression })?;
                let results = par::try_map_range(exec, pools.len(), |q| {
                    let (concept, pool) = &pools[q];
                    let list = rank_scenarios(model, inventory, concept, ds, pool)?;
                    let rel = list.relevance();
                    let found = rel.iter().filter(|&&r| r).count();
                    if found != RELEVANT_PER_QUERY {
                        return Err(RetrievalError::IncompleteTest {
                            concept: concept.clone(),
                            expression,
                            expected: RELEVANT_PER_QUERY,
                            found,
                        });
                    }
                    Ok(QueryResult {
                        ap: average_precision(&rel)?,
                        p2: precision_at_2(&rel)?,
                        top: list.entries.iter().take(2).map(|e| e.expression).collect(),
                    })
                })?;
                let n = results.len().max(1) as f64;
                for r in &results {
                    for e in &r.top {
                        counts[expression.rank()][e.rank()] += 1;
                    }
                }
                scores.push(ExpressionScore {
                    variant,
                    expression,
                    map: results.iter().map(|r| r.ap).sum::<f64>() / n,
                    p_at_2: results.iter().map(|r| r.p2).sum::<f64>() / n,
                    ap: results.iter().map(|r| r.ap).collect(),
                });
            }
            confusions.push(ConfusionMatrix {
                variant,
                kind: ds.kind,
                counts,
            });
        }
    }
    // report order: variant, then expression
    scores.sort_by_key(|s| (s.variant, s.expression));
    confusions.sort_by_key(|c| (c.variant, c.kind));
    Ok(RetrievalReport {
        concept_count,
        scores,
        confusions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(bits: &[u8]) -> Vec<bool> {
        bits.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&rel(&[1, 1, 0, 0, 0, 0, 0, 0])).unwrap(), 1.0);
        assert!((average_precision(&rel(&[1, 0, 1, 0, 0, 0, 0, 0])).unwrap() - 5.0 / 6.0).abs() < 1e-9);
        let worst = average_precision(&rel(&[0, 0, 0, 0, 0, 0, 1, 1])).unwrap();
        assert!((worst - 0.19643).abs() < 1e-5);
        assert!((worst - (1.0 / 7.0 + 2.0 / 8.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&rel(&[0, 0, 0])), Err(RetrievalError::NoRelevant));
    }

    #[test]
    fn p2_examples() {
        assert_eq!(precision_at_2(&rel(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(precision_at_2(&rel(&[1, 0, 0, 1])).unwrap(), 0.5);
        assert_eq!(precision_at_2(&rel(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(precision_at_2(&rel(&[1])), Err(RetrievalError::TooShort(1)));
    }

    #[test]
    fn ap_at_least_half_p2() {
        // every placement of 2 relevant among 8
        for i in 0..8 {
            for j in (i + 1)..8 {
                let mut r = vec![false; 8];
                r[i] = true;
                r[j] = true;
                let ap = average_precision(&r).unwrap();
                let p2 = precision_at_2(&r).unwrap();
                assert!(ap >= p2 / 2.0);
                assert!((0.0..=1.0).contains(&ap));
            }
        }
    }

    #[test]
    fn confusion_masses() {
        let m = ConfusionMatrix {
            variant: Variant::NnDot,
            kind: QuantKind::Cardinal,
            counts: [[2, 1, 0, 1], [1, 2, 1, 0], [0, 1, 2, 1], [3, 0, 1, 0]],
        };
        assert_eq!(m.row_sum(0), 4);
        assert_eq!(m.opposite_mass(), 4);
        assert_eq!(m.adjacent_mass(), 3 + 4 + 4 + 1);
    }
}
