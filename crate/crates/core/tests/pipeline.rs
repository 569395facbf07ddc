use bels_core::prequential::{evaluate_from, run_variant};
use bels_core::stream::{
    gaussian_clusters_stream, led_stream, sea_stream, GaussianDrift, Limited, StreamSpec,
};
use bels_core::{
    evaluate, BelsConfig, BelsModel, Evaluator, Snapshot, StreamConfig, StreamSource, Variant,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn small(variant: Variant, chunk_size: usize, seed: u64) -> BelsConfig {
    BelsConfig {
        n: 5,
        m: 5,
        m_o: 6,
        m_p: 4,
        ..BelsConfig::default()
    }
    .with_chunk_size(chunk_size)
    .with_variant(variant)
    .with_seed(seed)
}

#[test]
fn gaussian_accuracy_approaches_bayes_rate() {
    // Two unit-variance classes at -(1,1) and (1,1): the optimal rule errs
    // with probability Phi(-sqrt(2)).
    let bayes = Normal::new(0.0, 1.0).unwrap().cdf(2f64.sqrt());
    let means = vec![vec![-1.0, -1.0], vec![1.0, 1.0]];
    let mut stream =
        gaussian_clusters_stream(&means, 1.0, 20_000, 1, &GaussianDrift::None, 3).unwrap();
    let mut model = BelsModel::new(BelsConfig::bels2().with_chunk_size(20), 2, 2).unwrap();
    let series = evaluate(&mut model, &mut stream, 1000).unwrap();
    let late = &series.records[series.records.len() / 2..];
    let mean_window = late.iter().map(|r| r.window_accuracy).sum::<f64>() / late.len() as f64;
    assert!(
        mean_window <= bayes + 0.02,
        "{mean_window} vs Bayes {bayes}"
    );
    assert!(
        mean_window >= bayes - 0.03,
        "{mean_window} vs Bayes {bayes}"
    );
}

#[test]
fn every_variant_handles_ten_classes() {
    for variant in Variant::ALL {
        let mut stream = led_stream(0, 0.0, None, Some(3000), 1).unwrap();
        let mut model = BelsModel::new(
            BelsConfig::bels1()
                .with_chunk_size(20)
                .with_variant(variant),
            24,
            10,
        )
        .unwrap();
        let series = evaluate(&mut model, &mut stream, 500).unwrap();
        assert!(
            series.final_accuracy > 0.5,
            "{variant}: {}",
            series.final_accuracy
        );
    }
}

#[test]
fn snapshot_of_pooled_ensemble_resumes_exactly() {
    let cfg = small(Variant::Bels, 5, 4);
    let make = || sea_stream(&[0, 2, 1], 300, 0.2, 8).unwrap();
    let mut reference = BelsModel::new(cfg.clone(), 3, 2).unwrap();
    let mut ref_eval = Evaluator::new(100).unwrap();
    evaluate_from(&mut reference, &mut make(), &mut ref_eval, None).unwrap();

    let mut model = BelsModel::new(cfg, 3, 2).unwrap();
    let mut eval = Evaluator::new(100).unwrap();
    let mut stream = make();
    for _ in 0..97 {
        let chunk = stream.next_chunk(5, eval.samples_seen()).unwrap().unwrap();
        eval.step(&mut model, chunk).unwrap();
    }
    assert!(!model.ensemble.pool.is_empty() || model.ensemble.discarded > 0);
    let snap = Snapshot::from_json(&Snapshot::new(&model, Some(&eval)).to_json().unwrap()).unwrap();
    let (mut model, mut eval) = (snap.model, snap.progress.unwrap());
    evaluate_from(&mut model, &mut stream, &mut eval, None).unwrap();
    assert_eq!(model, reference);
    let acc = |e: &Evaluator| {
        e.records()
            .iter()
            .map(|r| (r.cumulative_accuracy, r.window_accuracy))
            .collect::<Vec<_>>()
    };
    assert_eq!(acc(&eval), acc(&ref_eval));
}

#[test]
fn stream_config_and_direct_generator_agree() {
    let cfg = StreamConfig {
        spec: StreamSpec::Sea {
            functions: vec![0, 3],
            segment_len: 200,
            noise: 0.1,
            transition: Default::default(),
        },
        standardize: false,
    };
    let mut a = cfg.build(5).unwrap();
    let mut b = sea_stream(&[0, 3], 200, 0.1, 5).unwrap();
    for _ in 0..400 {
        assert_eq!(a.next_sample(), b.next_sample());
    }
    assert!(a.next_sample().is_none());
}

#[test]
fn identical_seeds_identical_series() {
    let cfg = StreamConfig {
        spec: StreamSpec::Hyperplane {
            d: 6,
            drift_per_sample: 0.001,
            length: 2000,
            noise: 0.05,
        },
        standardize: true,
    };
    let model = BelsConfig::bels1().with_chunk_size(10).with_seed(2);
    let a = run_variant(&model, &cfg, 2, 200).unwrap();
    let b = run_variant(&model, &cfg, 2, 200).unwrap();
    let acc = |s: &bels_core::PrequentialSeries| {
        s.records
            .iter()
            .map(|r| (r.cumulative_accuracy, r.window_accuracy))
            .collect::<Vec<_>>()
    };
    assert_eq!(acc(&a), acc(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ensemble_respects_capacities(
        variant_idx in 0usize..4,
        chunk_size in 1usize..12,
        seed in 0u64..1000,
        noise in 0.0f64..0.4,
    ) {
        let variant = Variant::ALL[variant_idx];
        let cfg = small(variant, chunk_size, seed);
        let mut model = BelsModel::new(cfg.clone(), 3, 2).unwrap();
        let mut stream = Limited::new(sea_stream(&[0, 1, 2], 150, noise, seed).unwrap(), 450);
        while let Some(chunk) = stream.next_chunk(chunk_size, 0).unwrap() {
            let pred = model.predict(&chunk.x).unwrap();
            prop_assert_eq!(pred.len(), chunk.len());
            prop_assert!(pred.iter().all(|&c| c < 2));
            model.learn(&chunk.x, &chunk.y).unwrap();
            let e = &model.ensemble;
            prop_assert!(!e.active.is_empty());
            let cap = if variant.is_ensemble() { cfg.m_o } else { 1 };
            prop_assert!(e.active.len() <= cap);
            prop_assert!(e.pool.len() <= cfg.m_p);
            if variant != Variant::Bels {
                prop_assert!(e.pool.is_empty());
            }
            prop_assert!((0.0..=1.0).contains(&e.delta));
        }
    }

    #[test]
    fn cumulative_accuracy_matches_counts(seed in 0u64..500, window in 1usize..300) {
        let mut stream = Limited::new(sea_stream(&[0], 1000, 0.1, seed).unwrap(), 600);
        let mut model = BelsModel::new(small(Variant::BelsEns, 7, seed), 3, 2).unwrap();
        let series = evaluate(&mut model, &mut stream, window).unwrap();
        let mut prev = 0;
        for r in &series.records {
            prop_assert!(r.samples_seen > prev);
            prev = r.samples_seen;
            prop_assert!((0.0..=1.0).contains(&r.cumulative_accuracy));
            prop_assert!((0.0..=1.0).contains(&r.window_accuracy));
            prop_assert!(r.cs_per_1000 >= 0.0);
            let correct = r.cumulative_accuracy * r.samples_seen as f64;
            prop_assert!((correct - correct.round()).abs() < 1e-6);
        }
        prop_assert_eq!(series.final_accuracy, series.records.last().unwrap().cumulative_accuracy);
    }
}
