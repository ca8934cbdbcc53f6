use proptest::prelude::*;
use quantground::mapping::{self, TrainingPair};
use quantground::scenario::{self, classify_ratio, Combination};
use quantground::vision::{self, SummaryStats};
use quantground::{synthesize_inventory, vecmath, CompositionMode, Expression, QuantKind, Split, SynthesisConfig};

fn inventory(seed: u64) -> quantground::ConceptInventory {
    synthesize_inventory(&SynthesisConfig {
        concept_count: 40,
        dim: 12,
        seed,
        ..SynthesisConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn built_datasets_always_validate(seed in 0u64..1000, quant in any::<bool>()) {
        let inv = inventory(seed % 7);
        let kind = if quant { QuantKind::Quantifier } else { QuantKind::Cardinal };
        let ds = scenario::build_dataset(&inv, kind, CompositionMode::Summed, seed).unwrap();
        let report = scenario::validate_dataset(&ds, &inv);
        prop_assert!(report.passed(), "{:?}", report.violations.first());
        // summed scenes: dot with the target grows with the target count
        for s in ds.scenarios.iter().filter(|s| s.combination.numerator() > 0) {
            let t = &inv.get(&s.target).unwrap().visual;
            let d = vecmath::dot(t, &s.vector).unwrap();
            let n = s.combination.numerator() as f64;
            let below = s.combination.distractors() as f64 * inv.mean_pairwise_cosine();
            prop_assert!(d < n + below + 1e-9);
        }
    }

    #[test]
    fn medians_follow_quartile_order(values in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
        let s = SummaryStats::from_values(&values);
        prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        prop_assert!(s.min <= s.mean && s.mean <= s.max);
        prop_assert_eq!(s.count, values.len());
    }

    #[test]
    fn folds_are_balanced_per_class(labels in proptest::collection::vec(0usize..4, 10..80), k in 2usize..6, seed in any::<u64>()) {
        let folds = vision::stratified_folds(&labels, k, seed);
        for class in 0..4 {
            let mut counts = vec![0usize; k];
            for (l, f) in labels.iter().zip(&folds) {
                if *l == class {
                    counts[*f] += 1;
                }
            }
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "{counts:?}");
        }
    }

    #[test]
    fn lin_residual_is_never_beaten_by_descent(seed in 0u64..500) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<TrainingPair> = (0..15)
            .map(|_| TrainingPair {
                word: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                scene: (0..4).map(|_| rng.random_range(-3.0..3.0)).collect(),
                concept: "p".into(),
                combination: Combination::new(2, 3).unwrap(),
            })
            .collect();
        let closed = mapping::train_lin(&pairs, Expression::Two).unwrap();
        let mut start = mapping::init_model(Expression::Two, mapping::Variant::Lin, 5, 4, &Default::default());
        start.weights.fill(0.0);
        let gd = mapping::gradient_descent(start, &pairs, 0.3, 100).unwrap();
        let (a, b) = (mapping::loss(&closed, &pairs).unwrap(), mapping::loss(&gd, &pairs).unwrap());
        prop_assert!(a <= b * (1.0 + 1e-12), "{a} vs {b}");
    }
}

proptest! {
    #[test]
    fn ratio_classes_cover_every_non_half_combination(d in 1usize..=9, n_raw in 0usize..=9) {
        let n = n_raw % (d + 1);
        let combo = Combination::new(n, d).unwrap();
        match classify_ratio(combo) {
            Ok(e) => {
                prop_assert_eq!(e.kind(), QuantKind::Quantifier);
                match e {
                    Expression::No => prop_assert_eq!(n, 0),
                    Expression::All => prop_assert_eq!(n, d),
                    Expression::Few => prop_assert!(n > 0 && 2 * n < d),
                    Expression::Most => prop_assert!(2 * n > d && n < d),
                    _ => prop_assert!(false),
                }
            }
            Err(_) => prop_assert_eq!(2 * n, d),
        }
    }

    #[test]
    fn splits_partition_the_table(quant in any::<bool>()) {
        let kind = if quant { QuantKind::Quantifier } else { QuantKind::Cardinal };
        let table = scenario::default_combo_table(kind);
        prop_assert_eq!(table.per_concept(), 24);
        prop_assert_eq!(table.per_concept_in(Split::Train), 16);
        prop_assert_eq!(table.per_concept_in(Split::Test), 8);
    }
}
