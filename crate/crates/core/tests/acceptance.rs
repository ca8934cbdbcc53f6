//! Acceptance suite: one PASS/FAIL line per criterion over five seeds.
//!
//! Runs without the libtest harness so the summary is always printed; the
//! process exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use quantground::mapping::{self, Activation, MappingModel, TrainingMeta, Variant};
use quantground::pipeline::{self, VisionReport};
use quantground::retrieval::{self, average_precision};
use quantground::{
    synthesize_inventory, vecmath, ConceptInventory, Dataset, Execution, Expression, Measure, QuantKind,
    RetrievalReport, RunConfig, Split,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const QUORUM: usize = 4;

struct SeedRun {
    seed: u64,
    datasets: [Dataset; 2],
    inventory: ConceptInventory,
    vision: VisionReport,
    retrieval: RetrievalReport,
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn run_seed(seed: u64) -> SeedRun {
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let exec = Execution::default();
    let inventory = synthesize_inventory(&cfg.synthesis()).expect("inventory");
    let datasets = pipeline::build_datasets(&inventory, &cfg, exec).expect("datasets");
    let vision = pipeline::analyze(&inventory, &datasets, &cfg, exec).expect("analysis");
    let models: Vec<MappingModel> = pipeline::train_all(&inventory, &datasets, &cfg, exec)
        .expect("pairs")
        .into_iter()
        .collect::<Result<_, _>>()
        .expect("training");
    let retrieval = pipeline::evaluate(&inventory, &datasets, &models, exec).expect("evaluation");
    SeedRun {
        seed,
        datasets,
        inventory,
        vision,
        retrieval,
    }
}

fn dataset_exactness(runs: &[SeedRun]) -> Verdict {
    let mut bad = Vec::new();
    for r in runs {
        for ds in &r.datasets {
            let (n, tr, te) = (ds.scenarios.len(), ds.count(Split::Train), ds.count(Split::Test));
            if (n, tr, te) != (4512, 3008, 1504) {
                bad.push(format!("seed {} {}: {n} ({tr}/{te})", r.seed, ds.kind));
            }
        }
    }
    Verdict {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            "4512 scenarios, 3008 train / 1504 test, both datasets, 5/5 seeds".into()
        } else {
            bad.join("; ")
        },
    }
}

fn composition_identities(runs: &[SeedRun]) -> Verdict {
    let (mut checked, mut worst_dot, mut worst_cos) = (0usize, 0.0f64, 0.0f64);
    for r in runs {
        for ds in &r.datasets {
            for s in ds.scenarios.iter().filter(|s| s.combination.numerator() == s.combination.denominator()) {
                let t = &r.inventory.get(&s.target).unwrap().visual;
                let n = s.combination.numerator() as f64;
                worst_dot = worst_dot.max((vecmath::dot(t, &s.vector).unwrap() - n).abs());
                worst_cos = worst_cos.max(vecmath::cosine_distance(t, &s.vector).unwrap().abs());
                checked += 1;
            }
        }
    }
    Verdict {
        pass: checked > 0 && worst_dot <= 1e-9 && worst_cos <= 1e-9,
        detail: format!("{checked} pure-target scenes; max |dot - n| = {worst_dot:.2e}, max cosine distance = {worst_cos:.2e} (tol 1e-9)"),
    }
}

fn medians(v: &VisionReport, kind: QuantKind, measure: Measure, split: Split) -> Vec<f64> {
    let p = v
        .profiles
        .iter()
        .find(|p| p.kind == kind && p.measure == measure && p.split == split)
        .expect("profile");
    kind.expressions().iter().map(|&e| p.median(e).unwrap()).collect()
}

fn ordering_property(runs: &[SeedRun]) -> Verdict {
    let mut bad = Vec::new();
    for r in runs {
        for split in [Split::Train, Split::Test] {
            let q = medians(&r.vision, QuantKind::Quantifier, Measure::CosineDistance, split);
            if !q.windows(2).all(|w| w[0] > w[1]) {
                bad.push(format!("seed {} {split} cosine_distance {q:?}", r.seed));
            }
            let c = medians(&r.vision, QuantKind::Cardinal, Measure::Dot, split);
            if !c.windows(2).all(|w| w[0] < w[1]) {
                bad.push(format!("seed {} {split} dot {c:?}", r.seed));
            }
        }
    }
    Verdict {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            "no > few > most > all (cosine distance) and one < two < three < four (dot), both splits, 5/5 seeds".into()
        } else {
            bad.join("; ")
        },
    }
}

fn svm_direction(runs: &[SeedRun]) -> Verdict {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let acc = |k, m| 100.0 * r.vision.svm.cell(k, m).unwrap().cv_accuracy;
        let q = acc(QuantKind::Quantifier, Measure::CosineDistance) - acc(QuantKind::Quantifier, Measure::Dot);
        let c = acc(QuantKind::Cardinal, Measure::Dot) - acc(QuantKind::Cardinal, Measure::CosineDistance);
        if q >= 5.0 && c >= 5.0 {
            ok += 1;
        }
        parts.push(format!("s{}: Q {q:+.1} C {c:+.1}", r.seed));
    }
    Verdict {
        pass: ok >= QUORUM,
        detail: format!("{ok}/5 seeds with both margins >= 5 points [{}]", parts.join(", ")),
    }
}

/// Random problems for gradient checks. Relu coordinates are only checked
/// when no pre-activation in that output row sits within 1e-4 of the kink.
fn gradient_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let h = 1e-5;
    let (mut coords, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    for draw in 0..100 {
        let variant = if draw % 2 == 0 { Variant::NnCos } else { Variant::NnDot };
        let activation = if draw % 4 < 2 { Activation::Identity } else { Activation::Relu };
        let d_in = rng.random_range(2..7);
        let d_out = rng.random_range(2..7);
        let n = rng.random_range(1..9);
        let pairs: Vec<mapping::TrainingPair> = (0..n)
            .map(|_| mapping::TrainingPair {
                word: (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
                scene: (0..d_out).map(|_| rng.random_range(-2.0..2.0)).collect(),
                concept: "x".into(),
                combination: quantground::scenario::Combination::new(1, 2).unwrap(),
            })
            .collect();
        let model = MappingModel {
            expression: Expression::Most,
            variant,
            weights: DMatrix::from_fn(d_out, d_in, |_, _| rng.random_range(-1.0..1.0)),
            bias: (0..d_out).map(|_| rng.random_range(-0.5..0.5)).collect(),
            activation,
            meta: TrainingMeta {
                epochs: 0,
                initial_loss: 0.0,
                final_loss: 0.0,
                seed: 0,
            },
        };
        let (_, grad) = mapping::loss_and_grad(&model, &pairs, variant).unwrap();
        let near_kink: Vec<bool> = (0..d_out)
            .map(|r| {
                activation == Activation::Relu
                    && pairs.iter().any(|p| {
                        let z: f64 = (0..d_in).map(|c| model.weights[(r, c)] * p.word[c]).sum::<f64>() + model.bias[r];
                        z.abs() < 1e-4
                    })
            })
            .collect();
        let loss_at = |m: &MappingModel| mapping::loss_and_grad(m, &pairs, variant).unwrap().0;
        for (r, &kink) in near_kink.iter().enumerate() {
            if kink {
                skipped += d_in + 1;
                continue;
            }
            for c in 0..=d_in {
                let (mut plus, mut minus) = (model.clone(), model.clone());
                let analytic = if c < d_in {
                    plus.weights[(r, c)] += h;
                    minus.weights[(r, c)] -= h;
                    grad.weights[(r, c)]
                } else {
                    plus.bias[r] += h;
                    minus.bias[r] -= h;
                    grad.bias[r]
                };
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                worst = worst.max(rel);
                coords += 1;
            }
        }
    }
    Verdict {
        pass: worst < 1e-4,
        detail: format!("100 draws, {coords} coordinates (weights and bias), {skipped} near-kink skipped; max relative error {worst:.2e}"),
    }
}

fn least_squares_optimality(runs: &[SeedRun]) -> Verdict {
    let mut bad = Vec::new();
    let mut min_gap = f64::INFINITY;
    for r in runs {
        for ds in &r.datasets {
            for e in ds.kind.expressions() {
                let pairs = mapping::collect_pairs(ds, &r.inventory, e, Split::Train).unwrap();
                let closed = mapping::train_lin(&pairs, e).unwrap().meta.final_loss;
                let mut start = mapping::init_model(e, Variant::Lin, r.inventory.dim(), r.inventory.dim(), &Default::default());
                start.weights.fill(0.0);
                start.bias.fill(0.0);
                let gd = mapping::gradient_descent(start, &pairs, 0.5, 100).unwrap().meta.final_loss;
                min_gap = min_gap.min(gd - closed);
                if closed > gd {
                    bad.push(format!("seed {} {e}: {closed} > {gd}", r.seed));
                }
            }
        }
    }
    Verdict {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("40 problems (8 expressions x 5 seeds); smallest margin of 100-step GD over closed form {min_gap:.3e}")
        } else {
            bad.join("; ")
        },
    }
}

fn retrieval_direction(runs: &[SeedRun]) -> Verdict {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let m = |v, k| r.retrieval.mean_map(v, k).unwrap();
        let q_cos = m(Variant::NnCos, QuantKind::Quantifier);
        let q_dot = m(Variant::NnDot, QuantKind::Quantifier);
        let c_dot = m(Variant::NnDot, QuantKind::Cardinal);
        let c_cos = m(Variant::NnCos, QuantKind::Cardinal);
        let c_lin = m(Variant::Lin, QuantKind::Cardinal);
        let all = r.retrieval.score(Variant::NnCos, Expression::All).unwrap().map;
        if q_cos > q_dot && c_dot > c_cos && c_dot > c_lin && all >= 0.95 {
            ok += 1;
        }
        parts.push(format!(
            "s{}: Q cos {q_cos:.3}/dot {q_dot:.3}, C dot {c_dot:.3}/cos {c_cos:.3}/lin {c_lin:.3}, all {all:.3}",
            r.seed
        ));
    }
    Verdict {
        pass: ok >= QUORUM,
        detail: format!("{ok}/5 seeds [{}]", parts.join("; ")),
    }
}

/// Not scored: the retrieval-direction numbers with relu outputs on the nn
/// variants, for comparison with the identity default.
fn relu_ablation(run: &SeedRun) -> String {
    let cfg = RunConfig {
        seed: run.seed,
        activation: Activation::Relu,
        ..RunConfig::default()
    };
    let exec = Execution::default();
    let trained = pipeline::train_all(&run.inventory, &run.datasets, &cfg, exec).expect("pairs");
    let failed = trained.iter().filter(|r| r.is_err()).count();
    let models: Vec<MappingModel> = trained.into_iter().filter_map(Result::ok).collect();
    if failed > 0 {
        return format!("relu s{}: {failed} models failed to train", run.seed);
    }
    let report = pipeline::evaluate(&run.inventory, &run.datasets, &models, exec).expect("evaluation");
    let m = |v, k| report.mean_map(v, k).unwrap();
    format!(
        "relu s{}: Q cos {:.3}/dot {:.3}, C dot {:.3}/cos {:.3}/lin {:.3}, all {:.3}",
        run.seed,
        m(Variant::NnCos, QuantKind::Quantifier),
        m(Variant::NnDot, QuantKind::Quantifier),
        m(Variant::NnDot, QuantKind::Cardinal),
        m(Variant::NnCos, QuantKind::Cardinal),
        m(Variant::Lin, QuantKind::Cardinal),
        report.score(Variant::NnCos, Expression::All).unwrap().map
    )
}

fn metric_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for seed in 0..3 {
        let toy = common::toy(seed);
        let report = retrieval::evaluate(
            &toy.models,
            &[&toy.datasets[0], &toy.datasets[1]],
            &toy.inventory,
            Execution::default(),
        )
        .unwrap();
        for m in &toy.models {
            let got = report.score(m.variant, m.expression).unwrap().map;
            worst = worst.max((got - common::brute_force_map(&toy, m)).abs());
            compared += 1;
        }
    }
    let examples = [
        ([1, 1, 0, 0, 0, 0, 0, 0], 1.0),
        ([1, 0, 1, 0, 0, 0, 0, 0], (1.0 + 2.0 / 3.0) / 2.0),
        ([0, 0, 0, 0, 0, 0, 1, 1], (1.0 / 7.0 + 2.0 / 8.0) / 2.0),
    ];
    for (bits, expected) in examples {
        let rel: Vec<bool> = bits.iter().map(|&b| b == 1).collect();
        worst = worst.max((average_precision(&rel).unwrap() - expected).abs());
    }
    Verdict {
        pass: worst <= 1e-12,
        detail: format!("{compared} (variant, expression) mAPs over 3 toy datasets vs 8!-ordering brute force, plus 3 AP examples; max deviation {worst:.1e}"),
    }
}

fn confusion_structure(runs: &[SeedRun]) -> Verdict {
    let mut row_errors = Vec::new();
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let expected = 2 * r.inventory.len() as u64;
        for c in &r.retrieval.confusions {
            for row in 0..4 {
                if c.row_sum(row) != expected {
                    row_errors.push(format!("seed {} {} {} row {row}", r.seed, c.variant, c.kind));
                }
            }
        }
        let m = r.retrieval.confusion(Variant::NnDot, QuantKind::Cardinal).unwrap();
        let (adj, opp) = (m.adjacent_mass(), m.opposite_mass());
        if adj > opp {
            ok += 1;
        }
        parts.push(format!("s{}: {adj} vs {opp}", r.seed));
    }
    Verdict {
        pass: row_errors.is_empty() && ok >= QUORUM,
        detail: format!(
            "rows sum to 376 in all {} matrices{}; nn-dot cardinal adjacent > opposite on {ok}/5 seeds [{}]",
            runs.iter().map(|r| r.retrieval.confusions.len()).sum::<usize>(),
            if row_errors.is_empty() { String::new() } else { format!(" EXCEPT {}", row_errors.join(", ")) },
            parts.join(", ")
        ),
    }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let mut bytes = fs::read(&path).unwrap();
                if rel == "run.conf" {
                    // the output path itself legitimately differs
                    let text = String::from_utf8(bytes).unwrap();
                    bytes = text
                        .lines()
                        .filter(|l| !l.starts_with("out ="))
                        .collect::<Vec<_>>()
                        .join("\n")
                        .into_bytes();
                }
                out.insert(rel, bytes);
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for (i, exec) in [Execution::Parallel, Execution::Parallel, Execution::Sequential].into_iter().enumerate() {
        let cfg = RunConfig {
            out: tmp.path().join(format!("run{i}")),
            ..RunConfig::default()
        };
        pipeline::cmd_all(&cfg, exec).unwrap();
        trees.push(read_tree(&cfg.out));
    }
    let files = trees[0].len();
    let same = trees[1..].iter().all(|t| t == &trees[0]);
    let mut differing = Vec::new();
    for t in &trees[1..] {
        for (k, v) in &trees[0] {
            if t.get(k) != Some(v) {
                differing.push(k.clone());
            }
        }
    }
    Verdict {
        pass: same && files > 0,
        detail: if same {
            format!("{files} files (inventory, manifests, 24 models, reports) byte-identical across 2 parallel runs and 1 sequential run")
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    }
}

fn main() -> ExitCode {
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    let verdicts = [
        ("dataset exactness", dataset_exactness(&runs)),
        ("composition identities", composition_identities(&runs)),
        ("ordering property", ordering_property(&runs)),
        ("SVM direction", svm_direction(&runs)),
        ("gradient correctness", gradient_correctness()),
        ("least-squares optimality", least_squares_optimality(&runs)),
        ("retrieval direction", retrieval_direction(&runs)),
        ("metric oracle", metric_oracle()),
        ("confusion structure", confusion_structure(&runs)),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in verdicts.iter().enumerate() {
        println!(
            "criterion {:>2} {:<26} {}  {}",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!("note: {}", relu_ablation(&runs[0]));
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
