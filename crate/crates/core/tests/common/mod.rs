//! Shared fixtures: a three-concept toy retrieval problem and a brute-force
//! ranking oracle that knows nothing about the library's sort.

#![allow(dead_code)]

use nalgebra::DMatrix;
use quantground::concept::Concept;
use quantground::mapping::{Activation, MappingModel, TrainingMeta, Variant};
use quantground::scenario::{default_combo_table, Scenario, Split};
use quantground::{vecmath, CompositionMode, ConceptInventory, Dataset, Expression, QuantKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Toy {
    pub inventory: ConceptInventory,
    pub datasets: Vec<Dataset>,
    pub models: Vec<MappingModel>,
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    vecmath::normalize(&v).unwrap()
}

/// Three concepts, both dataset kinds, test splits only, random models.
/// A few candidate vectors are duplicated on purpose to force score ties.
pub fn toy(seed: u64) -> Toy {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let concepts: Vec<Concept> = (0..3)
        .map(|i| Concept {
            name: format!("toy{i}"),
            visual: unit(&mut rng, d),
            word: unit(&mut rng, d),
        })
        .collect();
    let inventory = ConceptInventory::new(concepts).unwrap();

    let mut datasets = Vec::new();
    for kind in QuantKind::ALL {
        let table = default_combo_table(kind);
        let mut scenarios = Vec::new();
        for c in inventory.concepts() {
            for entry in &table.entries {
                for &combo in entry.combos(Split::Test) {
                    scenarios.push(Scenario {
                        target: c.name.clone(),
                        combination: combo,
                        expression: entry.expression,
                        split: Split::Test,
                        vector: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                        distractors: Vec::new(),
                    });
                }
            }
        }
        // ties: copy one candidate's vector onto another of the same concept
        for base in (0..scenarios.len()).step_by(8) {
            let v = scenarios[base + 1].vector.clone();
            scenarios[base + 6].vector = v;
        }
        datasets.push(Dataset {
            kind,
            mode: CompositionMode::Summed,
            scenarios,
            table,
            concat_pca: None,
        });
    }

    let mut models = Vec::new();
    for variant in Variant::ALL {
        for expression in Expression::ALL {
            models.push(MappingModel {
                expression,
                variant,
                weights: DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)),
                bias: (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
                activation: Activation::Identity,
                meta: TrainingMeta {
                    epochs: 0,
                    initial_loss: 0.0,
                    final_loss: 0.0,
                    seed: 0,
                },
            });
        }
    }
    Toy {
        inventory,
        datasets,
        models,
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// AP written from the textbook definition: mean over relevant items of the
/// precision at that item's rank.
fn ap_by_definition(rel: &[bool]) -> f64 {
    let relevant: Vec<usize> = (0..rel.len()).filter(|&k| rel[k]).collect();
    let mut total = 0.0;
    for &k in &relevant {
        let at_or_above = (0..=k).filter(|&j| rel[j]).count();
        total += at_or_above as f64 / (k + 1) as f64;
    }
    total / relevant.len() as f64
}

/// Brute-force AP for one query: enumerate every ordering of the candidates,
/// keep the one that is sorted by the variant's key with ties broken by
/// scenario index, and score it.
pub fn brute_force_ap(model: &MappingModel, word: &[f64], ds: &Dataset, candidates: &[usize]) -> f64 {
    let p: Vec<f64> = (0..model.weights.nrows())
        .map(|r| (0..word.len()).map(|c| model.weights[(r, c)] * word[c]).sum::<f64>() + model.bias[r])
        .collect();
    // smaller key = better
    let key = |i: usize| -> f64 {
        let v = &ds.scenarios[i].vector;
        let dot: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
        match model.variant {
            Variant::NnDot => (dot - 1.0).abs(),
            _ => {
                let np = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                -(dot / (np * nv)).clamp(-1.0, 1.0)
            }
        }
    };
    let keys: Vec<f64> = candidates.iter().map(|&i| key(i)).collect();
    let mut consistent = Vec::new();
    for perm in permutations(candidates.len()) {
        let ok = perm.windows(2).all(|w| {
            let (a, b) = (keys[w[0]], keys[w[1]]);
            a < b || (a == b && candidates[w[0]] < candidates[w[1]])
        });
        if ok {
            consistent.push(perm.iter().map(|&j| candidates[j]).collect::<Vec<usize>>());
        }
    }
    assert_eq!(consistent.len(), 1, "exactly one ordering is consistent with scores and tie-break");
    let rel: Vec<bool> = consistent[0]
        .iter()
        .map(|&i| ds.scenarios[i].expression == model.expression)
        .collect();
    ap_by_definition(&rel)
}

/// Brute-force mAP per (variant, expression), macro-averaged over concepts.
pub fn brute_force_map(toy: &Toy, model: &MappingModel) -> f64 {
    let ds = toy
        .datasets
        .iter()
        .find(|d| d.kind == model.expression.kind())
        .unwrap();
    let mut sum = 0.0;
    for c in toy.inventory.concepts() {
        let candidates: Vec<usize> = (0..ds.scenarios.len())
            .filter(|&i| ds.scenarios[i].target == c.name)
            .collect();
        sum += brute_force_ap(model, &c.word, ds, &candidates);
    }
    sum / toy.inventory.len() as f64
}
