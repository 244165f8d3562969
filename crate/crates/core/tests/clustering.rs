mod common;

use std::collections::BTreeMap;

use common::*;
use lkt_core::clustering::{combo_covariance, fuzzy_cluster, ClusterModel, ComboPerformanceMatrix, FuzzyParams};
use lkt_core::event_log::{EventLog, InteractionEvent};
use lkt_core::features::TagCombo;
use proptest::prelude::*;
use rand::Rng;

fn assert_monotone(history: &[f64]) {
    for w in history.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "objective rose {} -> {}", w[0], w[1]);
    }
}

/// Same partition up to relabelling.
fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let mut map = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter().zip(b).all(|(x, y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Covariance of per-student mean correctness, two-pass, from scratch.
fn oracle_covariance(log: &EventLog, a: &TagCombo, b: &TagCombo) -> Option<f64> {
    let mut means: BTreeMap<String, BTreeMap<TagCombo, (u32, u32)>> = BTreeMap::new();
    for e in log.events().iter().filter(|e| e.is_question()) {
        let s = means
            .entry(e.student_id.to_string())
            .or_default()
            .entry(TagCombo::new(e.part, &e.tags))
            .or_default();
        s.0 += 1;
        s.1 += (e.correct == Some(true)) as u32;
    }
    let mut pairs = Vec::new();
    for combos in means.values() {
        let (Some(&(na, sa)), Some(&(nb, sb))) = (combos.get(a), combos.get(b)) else { continue };
        if na >= 2 && nb >= 2 {
            pairs.push((sa as f64 / na as f64, sb as f64 / nb as f64));
        }
    }
    if pairs.len() < 2 {
        return None;
    }
    let k = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    Some(pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / (k - 1.0))
}

#[test]
fn covariance_by_hand() {
    // Three students, two combos, two attempts each.
    // Means on combo A: 1, 0.5, 0; on combo B: 1, 0, 0.5.
    let outcomes = [("x", [true, true], [true, true]), ("y", [true, false], [false, false]), ("z", [false, false], [true, false])];
    let mut events = Vec::new();
    for (s, a, b) in outcomes {
        for (t, (&ya, &yb)) in a.iter().zip(&b).enumerate() {
            events.push(InteractionEvent::question(s, "qa", 1, &[1], t as i64 * 10, ya));
            events.push(InteractionEvent::question(s, "qb", 2, &[2], t as i64 * 10 + 5, yb));
        }
    }
    let m = combo_covariance(&EventLog::from_events(events).unwrap(), 2).unwrap();
    assert_eq!(m.len(), 2);
    // var(1, .5, 0) = .25; var(1, 0, .5) = .25; cov = ((.5)(.5) + 0 + (-.5)(0)) / 2 = .125
    assert!((m.get(0, 0) - 0.25).abs() < 1e-15);
    assert!((m.get(1, 1) - 0.25).abs() < 1e-15);
    assert!((m.get(0, 1) - 0.125).abs() < 1e-15);
    assert_eq!(m.support(0, 1), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariance_matches_oracle_and_is_symmetric(seed in any::<u64>()) {
        let log = random_log(&mut rng(seed), 30, 40);
        let Ok(m) = combo_covariance(&log, 2) else { return Ok(()) };
        let n = m.len();
        for a in 0..n {
            prop_assert!(m.get(a, a) >= 0.0);
            for b in 0..n {
                prop_assert_eq!(m.get(a, b).to_bits(), m.get(b, a).to_bits());
                let want = oracle_covariance(&log, &m.combos[a], &m.combos[b]).unwrap_or(0.0);
                prop_assert!((m.get(a, b) - want).abs() < 1e-12, "{} vs {}", m.get(a, b), want);
            }
        }
    }

    #[test]
    fn memberships_are_distributions(seed in any::<u64>(), n in 4usize..25, k in 2usize..4) {
        prop_assume!(k < n);
        let mut r = rng(seed);
        let mut dense = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let v: f64 = r.random_range(-1.0..1.0);
                dense[a * n + b] = v;
                dense[b * n + a] = v;
            }
        }
        let combos = (0..n).map(|i| TagCombo::new(1, &[i as u32])).collect();
        let m = ComboPerformanceMatrix::from_dense(combos, dense).unwrap();
        let model = fuzzy_cluster(&m, FuzzyParams::new(k, seed)).unwrap();
        assert_monotone(&model.objective_history);
        for i in 0..n {
            let row = model.membership_row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            prop_assert_eq!(model.crisp()[i], best as u32);
        }
    }
}

fn two_blocks(n: usize, split: usize) -> ComboPerformanceMatrix {
    let mut dense = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            dense[a * n + b] = if (a < split) == (b < split) { 0.04 } else { 0.0 };
        }
    }
    let combos = (0..n).map(|i| TagCombo::new((i % 7) as u8 + 1, &[i as u32])).collect();
    ComboPerformanceMatrix::from_dense(combos, dense).unwrap()
}

#[test]
fn planted_blocks_are_recovered() {
    let m = two_blocks(12, 5);
    let truth: Vec<u32> = (0..12).map(|i| (i >= 5) as u32).collect();
    for seed in 0..20 {
        let model = fuzzy_cluster(&m, FuzzyParams::new(2, seed)).unwrap();
        assert!(same_partition(model.crisp(), &truth), "seed {seed}: {:?}", model.crisp());
        assert_monotone(&model.objective_history);
    }
}

#[test]
fn planted_skills_in_a_log_are_recovered() {
    // Two latent skills; combos 0..6 draw on the first, 6..12 on the second.
    let mut r = rng(11);
    let mut events = Vec::new();
    for s in 0..400 {
        let skill = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let mut t = 0;
        for c in 0..12u32 {
            for _ in 0..6 {
                let p = sigmoid(skill[(c >= 6) as usize]);
                events.push(InteractionEvent::question(&format!("s{s}"), &format!("q{c}"), 1, &[c], t, r.random_bool(p)));
                t += 1000;
            }
        }
    }
    let log = EventLog::from_events(events).unwrap();
    let m = combo_covariance(&log, 10).unwrap();
    assert_eq!(m.len(), 12);
    let model = fuzzy_cluster(&m, FuzzyParams::new(2, 3)).unwrap();
    let truth: Vec<u32> = (0..12).map(|c| (c >= 6) as u32).collect();
    assert!(same_partition(model.crisp(), &truth), "{:?}", model.crisp());
    // Unrelated combos have near-zero covariance.
    for a in 0..6 {
        for b in 6..12 {
            assert!(m.get(a, b).abs() < 0.02, "cov({a},{b}) = {}", m.get(a, b));
        }
    }
}

#[test]
fn unknown_combos_get_uniform_rows() {
    let model = fuzzy_cluster(&two_blocks(10, 4), FuzzyParams::new(4, 1)).unwrap();
    let (row, crisp) = model.assign(&TagCombo::new(3, &[999]));
    assert_eq!(row, vec![0.25; 4]);
    assert_eq!(crisp, model.fallback_cluster());
    let known = model.combos()[2].clone();
    assert_eq!(model.assign(&known).0, model.membership_row(2));
}

#[test]
fn table_round_trip_and_determinism() {
    let m = two_blocks(9, 3);
    let a = fuzzy_cluster(&m, FuzzyParams::new(3, 5)).unwrap();
    let b = fuzzy_cluster(&m, FuzzyParams::new(3, 5)).unwrap();
    assert_eq!(a, b);
    let mut text = Vec::new();
    a.write_table(&mut text).unwrap();
    let back = ClusterModel::read_table(text.as_slice()).unwrap();
    assert_eq!(back.combos(), a.combos());
    assert_eq!(back.crisp(), a.crisp());
    for i in 0..9 {
        assert_eq!(back.membership_row(i), a.membership_row(i));
    }
}
