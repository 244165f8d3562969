mod common;

use common::*;
use lkt_core::event_log::{sort_chronological, EventLog};
use lkt_core::features::{Descriptor, FeatureKind, FeatureSpec, Featurizer, Level, StudentHistory};
use lkt_core::model::{export_text, fit_model, fit_nonlinear, load_model, save_model, LabelPolicy, Predictor, TrainingRun};
use lkt_core::synth::{SynthConfig, SynthWorld};
use proptest::prelude::*;
use rand::seq::SliceRandom;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn withheld_batches_match_masking_oracle(seed in any::<u64>()) {
        let log = sort_chronological(&random_log(&mut rng(seed), 5, 30));
        let model = random_model(&log, seed);
        let cuts = random_cuts(&mut rng(seed ^ 7), log.len());
        let got = run_batches(&model, &log, &cuts, LabelPolicy::Withheld);
        let want = masking_oracle(&model, &log, &batch_index(&cuts, log.len()));
        prop_assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn immediate_policy_ignores_batching(seed in any::<u64>()) {
        let log = sort_chronological(&random_log(&mut rng(seed), 4, 25));
        let model = random_model(&log, seed);
        let cuts = random_cuts(&mut rng(seed ^ 3), log.len());
        let batched = run_batches(&model, &log, &cuts, LabelPolicy::Immediate);
        let mut p = Predictor::new(&model);
        prop_assert_eq!(batched, p.score(&log).unwrap());
    }

    #[test]
    fn score_is_order_invariant(seed in any::<u64>()) {
        let log = random_log(&mut rng(seed), 2, 20);
        let model = random_model(&log, seed);
        let f = model.featurizer();
        let e = log.events().iter().find(|e| e.is_question()).unwrap();
        let mut row = f.featurize(&StudentHistory::new(), e, model.catalog()).unwrap();
        let z = model.score_row(&row).unwrap();
        row.shuffle(&mut rng(seed));
        prop_assert!((model.score_row(&row).unwrap() - z).abs() < 1e-12);
    }
}

#[test]
fn hundred_random_partitions() {
    let log = sort_chronological(&random_log(&mut rng(99), 8, 40));
    let model = random_model(&log, 99);
    let mut r = rng(100);
    for _ in 0..100 {
        let cuts = random_cuts(&mut r, log.len());
        let got = run_batches(&model, &log, &cuts, LabelPolicy::Withheld);
        let want = masking_oracle(&model, &log, &batch_index(&cuts, log.len()));
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn served_predictions_match_scratch_recomputation() {
    let log = sort_chronological(&random_log(&mut rng(5), 6, 50));
    let model = random_model(&log, 5);
    let mut p = Predictor::new(&model);
    let got = p.score(&log).unwrap();
    // One batch per event: every earlier outcome is visible.
    let want = masking_oracle(&model, &log, &(0..log.len()).collect::<Vec<_>>());
    assert_eq!(got.len(), want.len());
    assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
}

fn synth_log(seed: u64, students: usize, mean_events: usize) -> EventLog {
    SynthWorld::new(SynthConfig {
        students,
        mean_events,
        items: 150,
        combos: 30,
        seed,
        ..Default::default()
    })
    .unwrap()
    .log()
    .unwrap()
}

fn spec(ds: Vec<Descriptor>) -> Featurizer {
    Featurizer::new(FeatureSpec::new(ds).unwrap(), None).unwrap()
}

#[test]
fn adding_performance_counts_never_hurts_training_fit() {
    let run = TrainingRun {
        l2_penalty: 0.0,
        max_iter: 3000,
        ..Default::default()
    };
    let items = || Descriptor::new(FeatureKind::Intercept, Level::Item);
    let small = spec(vec![items()]);
    let big = spec(vec![
        items(),
        Descriptor::new(FeatureKind::Count, Level::OverallSuccess),
        Descriptor::new(FeatureKind::Count, Level::OverallFailure),
    ]);
    let mut fixtures: Vec<EventLog> = (0..3).map(|s| synth_log(s, 60, 60)).collect();
    fixtures.extend((0..3).map(|s| random_log(&mut rng(s), 40, 40)));
    for (k, log) in fixtures.iter().enumerate() {
        let a = fit_model(log, &small, &run).unwrap().diagnostics.final_loss;
        let b = fit_model(log, &big, &run).unwrap().diagnostics.final_loss;
        assert!(b <= a + 1e-6, "fixture {k}: {b} > {a}");
    }
}

#[test]
fn loss_history_is_monotone_and_fit_is_deterministic() {
    let log = synth_log(7, 80, 60);
    let f = spec(vec![
        Descriptor::new(FeatureKind::Intercept, Level::Item),
        Descriptor::new(FeatureKind::LogCount, Level::TagComboInPart),
        Descriptor::new(FeatureKind::Recency, Level::TagComboInPart),
    ]);
    let run = TrainingRun::default();
    let fit_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit_model(&log, &f, &run).unwrap())
    };
    let a = fit_with(1);
    let b = fit_with(4);
    assert!(a.diagnostics.converged);
    assert!(a.diagnostics.loss_history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(a.bias.to_bits(), b.bias.to_bits());
    assert!(a.coefficients.iter().zip(&b.coefficients).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn save_load_predicts_bit_identically() {
    let log = sort_chronological(&synth_log(8, 60, 40));
    let f = Featurizer::new(kitchen_sink_spec(), Some(small_clusters())).unwrap();
    let model = fit_model(&log, &f, &TrainingRun::default()).unwrap();
    let mut bytes = Vec::new();
    save_model(&model, &mut bytes).unwrap();
    let loaded = load_model(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    save_model(&loaded, &mut again).unwrap();
    assert_eq!(bytes, again);

    let probe = sort_chronological(&synth_log(9, 20, 50));
    assert!(probe.len() >= 1000);
    let probe = EventLog::from_events(probe.events()[..1000].to_vec()).unwrap();
    let a = Predictor::new(&model).score(&probe).unwrap();
    let b = Predictor::new(&loaded).score(&probe).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));

    let mut text = Vec::new();
    export_text(&model, &mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    assert!(text.lines().any(|l| l.starts_with("(bias)\t")));
    assert!(load_model(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn nonlinear_search_stays_in_bounds() {
    let log = synth_log(10, 60, 50);
    let f = spec(vec![
        Descriptor::new(FeatureKind::Intercept, Level::Item),
        Descriptor::new(FeatureKind::Recency, Level::TagComboInPart),
        Descriptor::new(FeatureKind::RecencyWeightedCount, Level::TagComboInPart),
        Descriptor::new(FeatureKind::Errordec, Level::Student),
    ]);
    let run = TrainingRun {
        outer_cycles: 1,
        param_tol: 0.05,
        ..Default::default()
    };
    let start = fit_model(&log, &f, &run).unwrap();
    let model = fit_nonlinear(&log, &f, &run).unwrap();
    for (i, _, v) in model.nonlinear_params() {
        let (lo, hi) = model.spec().descriptors()[i].kind.param_bounds().unwrap();
        assert!((lo..=hi).contains(&v), "{v} outside [{lo}, {hi}]");
    }
    assert!(model.diagnostics.final_loss <= start.diagnostics.final_loss);
    assert!(!model.diagnostics.outer_trace.is_empty());
}
