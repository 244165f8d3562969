mod common;

use std::collections::HashMap;

use common::*;
use lkt_core::event_log::{EventLog, Id, InteractionEvent};
use lkt_core::features::{
    recency_value, Descriptor, FeatureKind, FeatureSpec, Featurizer, Level, StudentHistory, TagCombo,
};
use lkt_core::model::{build_catalog, vectorize, RowStream};
use proptest::prelude::*;

fn streaming_rows(f: &Featurizer, log: &EventLog, feed: Option<&[f64]>) -> Vec<Vec<(u32, f64)>> {
    let catalog = build_catalog(log, f).unwrap();
    let mut hs: HashMap<Id, StudentHistory> = HashMap::new();
    let mut out = Vec::new();
    for e in log.events() {
        let h = hs.entry(e.student_id.clone()).or_default();
        let mut p = None;
        if e.is_question() {
            out.push(f.featurize(h, e, &catalog).unwrap());
            p = feed.map(|x| x[out.len() - 1]);
        }
        f.apply_event(h, e, p).unwrap();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streaming_matches_brute_force(seed in any::<u64>(), students in 1usize..6, max_events in 1usize..40) {
        let log = random_log(&mut rng(seed), students, max_events);
        let f = kitchen_sink_featurizer();
        let catalog = build_catalog(&log, &f).unwrap();
        let feed = fake_predictions(log.question_count());
        let fast = streaming_rows(&f, &log, Some(&feed));
        let slow = brute_force_rows(f.spec(), Some(&small_clusters()), &catalog, &log, Some(&feed));
        prop_assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!(rows_match(a, b, 1e-12), "{:?} vs {:?}", a, b);
        }
    }

    #[test]
    fn vectorized_and_streamed_rows_agree(seed in any::<u64>()) {
        let log = random_log(&mut rng(seed), 7, 30);
        let f = kitchen_sink_featurizer();
        let catalog = build_catalog(&log, &f).unwrap();
        let feed = fake_predictions(log.question_count());
        let m = vectorize(&log, &f, &catalog, Some(&feed)).unwrap();
        let reference = streaming_rows(&f, &log, Some(&feed));
        prop_assert_eq!(m.rows(), reference.len());
        for (r, (row, label)) in RowStream::new(&log, &f, &catalog, Some(&feed)).map(|x| x.unwrap()).enumerate() {
            let (cols, vals) = m.row(r);
            let dense: Vec<(u32, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
            prop_assert_eq!(&dense, &reference[r]);
            prop_assert_eq!(&row, &reference[r]);
            prop_assert_eq!(label, m.label(r));
        }
    }

    #[test]
    fn current_label_is_never_read(seed in any::<u64>()) {
        let log = random_log(&mut rng(seed), 4, 25);
        let f = kitchen_sink_featurizer();
        let catalog = build_catalog(&log, &f).unwrap();
        let mut hs: HashMap<Id, StudentHistory> = HashMap::new();
        for e in log.events() {
            let h = hs.entry(e.student_id.clone()).or_default();
            if e.is_question() {
                let mut flipped = e.clone();
                flipped.correct = e.correct.map(|c| !c);
                prop_assert_eq!(f.featurize(h, e, &catalog).unwrap(), f.featurize(h, &flipped, &catalog).unwrap());
            }
            f.apply_event(h, e, e.is_question().then_some(0.5)).unwrap();
        }
    }

    #[test]
    fn recency_is_non_increasing(gap_a in 60_000i64..10_000_000_000, extra in 0i64..1_000_000_000,
                                 d1 in 0.001f64..3.0, dd in 0.0f64..2.0) {
        let gap_b = gap_a + extra;
        let r = |gap: i64, d: f64| recency_value(gap, Some(0), d).unwrap();
        prop_assert!(r(gap_b, d1) <= r(gap_a, d1));
        prop_assert!(r(gap_a, d1 + dd) <= r(gap_a, d1));
        prop_assert!(r(gap_a, d1) > 0.0 && r(gap_a, d1) <= 1.0);
    }

    #[test]
    fn degenerate_parameters_recover_simpler_features(seed in any::<u64>()) {
        let log = random_log(&mut rng(seed), 3, 30);
        let spec = FeatureSpec::new(vec![
            Descriptor::new(FeatureKind::RecencyWeightedCount, Level::TagComboInPart).with_param(1.0),
            Descriptor::new(FeatureKind::Count, Level::TagComboInPart),
            Descriptor::new(FeatureKind::Errordec, Level::Student).with_param(1.0),
        ]).unwrap();
        let f = Featurizer::new(spec, None).unwrap();
        let feed = fake_predictions(log.question_count());
        for row in streaming_rows(&f, &log, Some(&feed)) {
            prop_assert_eq!(row[0].1, row[1].1);
            prop_assert_eq!(row[2].1, 0.0);
        }
    }
}

#[test]
fn mixed_sequence_state_matches_fold() {
    let mut r = rng(20);
    let log = random_log(&mut r, 1, 20);
    let f = kitchen_sink_featurizer();
    let mut h = StudentHistory::new();
    for e in log.events() {
        f.apply_event(&mut h, e, e.is_question().then_some(0.3)).unwrap();
    }
    let ev = log.events();
    let qs: Vec<&InteractionEvent> = ev.iter().filter(|e| e.is_question()).collect();
    assert_eq!(h.lecture_count as usize, ev.len() - qs.len());
    assert_eq!(h.overall_successes as usize, qs.iter().filter(|e| e.correct == Some(true)).count());
    assert_eq!(h.overall_failures as usize, qs.iter().filter(|e| e.correct == Some(false)).count());
    assert_eq!(h.student.attempts as usize, qs.len());
    assert_eq!(h.last_event_ms, ev.last().map(|e| e.timestamp_ms));
    for (combo, unit) in &h.combos {
        let mine: Vec<_> = qs.iter().filter(|e| TagCombo::new(e.part, &e.tags) == *combo).collect();
        assert_eq!(unit.attempts as usize, mine.len());
        assert_eq!(unit.last_time_ms, mine.last().map(|e| e.timestamp_ms));
    }
    for (item, unit) in &h.items {
        assert_eq!(unit.attempts as usize, qs.iter().filter(|e| &e.item_id == item).count());
    }
    for (part, unit) in &h.parts {
        assert_eq!(unit.attempts as usize, qs.iter().filter(|e| e.part == *part).count());
    }
    let mut s = 0.0;
    for e in &qs {
        let y = if e.correct == Some(true) { 1.0 } else { 0.0 };
        s = 0.8 * s + 0.2 * (0.3 - y);
    }
    assert!((h.errordec_state - s).abs() < 1e-15);
}

#[test]
fn rare_and_unseen_instances_use_the_part_fallback() {
    let spec = FeatureSpec::new(vec![Descriptor::new(FeatureKind::Intercept, Level::TagComboInPart).with_min_occurrence(2)]).unwrap();
    let f = Featurizer::new(spec, None).unwrap();
    let mut events = Vec::new();
    for t in 0..3 {
        events.push(InteractionEvent::question("a", "x", 2, &[5], t * 1000, true));
    }
    events.push(InteractionEvent::question("a", "y", 2, &[6], 5000, false));
    let log = EventLog::from_events(events).unwrap();
    let catalog = build_catalog(&log, &f).unwrap();
    let h = StudentHistory::new();
    let common = f.featurize(&h, &log.events()[0], &catalog).unwrap()[0].0;
    let rare = f.featurize(&h, &log.events()[3], &catalog).unwrap()[0].0;
    let unseen = f
        .featurize(&h, &InteractionEvent::question("b", "z", 2, &[1, 4, 7], 0, true), &catalog)
        .unwrap()[0]
        .0;
    assert_ne!(common, rare);
    assert_eq!(rare, unseen);
    let other_part = f
        .featurize(&h, &InteractionEvent::question("b", "z", 3, &[9], 0, true), &catalog)
        .unwrap()[0]
        .0;
    assert_ne!(other_part, unseen);
}
