//! Shared generators and from-scratch oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use lkt_core::clustering::ClusterModel;
use lkt_core::event_log::{EventLog, InteractionEvent};
use lkt_core::features::{Descriptor, FeatureKind, FeatureSpec, Featurizer, HistoryStore, Level, TagCombo};
use lkt_core::model::{
    batched_predict, build_catalog, clamp_probability, ColumnCatalog, FittedModel, InstanceKey, LabelPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random log: small item and tag vocabularies so units repeat, gaps from a
/// millisecond up to several hours, about one lecture in eight events.
pub fn random_log(rng: &mut ChaCha8Rng, students: usize, max_events: usize) -> EventLog {
    let mut events = Vec::new();
    for s in 0..students {
        let n = rng.random_range(1..=max_events);
        let mut t: i64 = rng.random_range(0..1_000_000);
        for _ in 0..n {
            let item = rng.random_range(0..12u32);
            let part = (item % 3) as u8 + 1;
            let tags: Vec<u32> = match item % 4 {
                0 => vec![1],
                1 => vec![1, 4],
                2 => vec![7, 4],
                _ => vec![],
            };
            let sid = format!("s{s}");
            if rng.random_range(0..8) == 0 {
                events.push(InteractionEvent::lecture(&sid, &format!("l{}", item % 3), part, &tags, t));
            } else {
                events.push(InteractionEvent::question(
                    &sid,
                    &format!("i{item}"),
                    part,
                    &tags,
                    t,
                    rng.random_bool(0.6),
                ));
            }
            t += match rng.random_range(0..4) {
                0 => rng.random_range(1..60_000),
                1 => rng.random_range(60_000..3_600_000),
                _ => rng.random_range(3_600_000..20_000_000),
            };
        }
    }
    EventLog::from_events(events).unwrap()
}

/// Two-cluster model over some of the combos `random_log` produces; the
/// others fall back.
pub fn small_clusters() -> Arc<ClusterModel> {
    let combos = vec![
        TagCombo::new(1, &[1]),
        TagCombo::new(2, &[1, 4]),
        TagCombo::new(3, &[4, 7]),
        TagCombo::new(1, &[4, 7]),
    ];
    let rows = vec![vec![0.8, 0.2], vec![0.3, 0.7], vec![0.5, 0.5], vec![0.1, 0.9]];
    Arc::new(ClusterModel::from_rows(combos, 2, rows).unwrap())
}

/// A spec touching every kind and every level, with rare-instance fallback
/// on some descriptors.
pub fn kitchen_sink_spec() -> FeatureSpec {
    use FeatureKind::*;
    use Level::*;
    FeatureSpec::new(vec![
        Descriptor::new(Intercept, Item).with_min_occurrence(3),
        Descriptor::new(Intercept, Student),
        Descriptor::new(Intercept, TagComboInPart),
        Descriptor::new(Intercept, Cluster),
        Descriptor::new(Count, Part),
        Descriptor::new(LogCount, TagComboInPart),
        Descriptor::new(Count, Student),
        Descriptor::new(Count, OverallSuccess),
        Descriptor::new(LogCount, OverallFailure),
        Descriptor::new(Count, Lecture),
        Descriptor::new(Recency, Item).with_param(0.3),
        Descriptor::new(Recency, TagComboInPart).with_param(0.7),
        Descriptor::new(Recency, Cluster).with_param(1.1),
        Descriptor::new(RecencyWeightedCount, TagComboInPart).with_param(0.6),
        Descriptor::new(RecencyWeightedCount, Student).with_param(0.9),
        Descriptor::new(RecencyWeightedCount, Part).with_param(0.25),
        Descriptor::new(Count, Item).per_instance().with_min_occurrence(2),
        Descriptor::new(Recency, Part).with_param(0.45).per_instance(),
        Descriptor::new(Errordec, Student).with_param(0.8),
    ])
    .unwrap()
}

pub fn kitchen_sink_featurizer() -> Featurizer {
    Featurizer::new(kitchen_sink_spec(), Some(small_clusters())).unwrap()
}

/// Deterministic stand-in predictions, one per question of the log.
pub fn fake_predictions(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.05 + 0.9 * ((i as f64 * 0.618_033_988_75).fract())).collect()
}

fn key_of(level: Level, e: &InteractionEvent, clusters: Option<&ClusterModel>) -> InstanceKey {
    match level {
        Level::Item => InstanceKey::Item(e.item_id.clone()),
        Level::Student => InstanceKey::Student(e.student_id.clone()),
        Level::Part => InstanceKey::Part(e.part),
        Level::TagComboInPart => InstanceKey::Combo(TagCombo::new(e.part, &e.tags)),
        Level::Cluster => {
            let combo = TagCombo::new(e.part, &e.tags);
            let c = clusters.unwrap();
            let crisp = match c.combos().iter().position(|x| *x == combo) {
                Some(i) => {
                    let row = c.membership_row(i);
                    let mut best = 0;
                    for j in 1..row.len() {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    best as u32
                }
                None => 0,
            };
            InstanceKey::Cluster(crisp)
        }
        _ => unreachable!(),
    }
}

/// Whether a prior question `p` belongs to the same unit as `e`.
fn same_unit(level: Level, p: &InteractionEvent, e: &InteractionEvent, clusters: Option<&ClusterModel>) -> bool {
    match level {
        Level::Student => true,
        _ => key_of(level, p, clusters) == key_of(level, e, clusters),
    }
}

/// Recomputes the feature row of `e` from nothing but the earlier
/// events of the same student. `outcome_visible[j]` says whether the outcome
/// of prior event `j` counts; `served[j]` is the prediction delivered for it.
pub fn brute_force_row(
    spec: &FeatureSpec,
    clusters: Option<&ClusterModel>,
    catalog: &ColumnCatalog,
    prefix: &[&InteractionEvent],
    outcome_visible: &[bool],
    served: &[Option<f64>],
    e: &InteractionEvent,
) -> Vec<(u32, f64)> {
    let mut row = Vec::new();
    for (i, d) in spec.descriptors().iter().enumerate() {
        let prior: Vec<usize> = (0..prefix.len())
            .filter(|&j| prefix[j].is_question())
            .filter(|&j| !d.level.has_instances() || same_unit(d.level, prefix[j], e, clusters))
            .collect();
        let count = match d.level {
            Level::Lecture => prefix.iter().filter(|p| !p.is_question()).count(),
            Level::OverallSuccess => prior
                .iter()
                .filter(|&&j| outcome_visible[j] && prefix[j].correct == Some(true))
                .count(),
            Level::OverallFailure => prior
                .iter()
                .filter(|&&j| outcome_visible[j] && prefix[j].correct == Some(false))
                .count(),
            _ => prior.len(),
        } as f64;
        let value = match d.kind {
            FeatureKind::Intercept => 1.0,
            FeatureKind::Count => count,
            FeatureKind::LogCount => (1.0 + count).ln(),
            FeatureKind::Recency => match prior.last() {
                None => 0.0,
                Some(&j) => {
                    let minutes = (e.timestamp_ms - prefix[j].timestamp_ms) as f64 / 60_000.0;
                    1.0 / minutes.max(1.0).powf(d.param.unwrap())
                }
            },
            FeatureKind::RecencyWeightedCount => {
                let w = d.param.unwrap();
                let n = prior.len() as i32;
                (0..n).map(|k| w.powi(n - 1 - k)).sum()
            }
            FeatureKind::Errordec => {
                let dec = d.param.unwrap();
                let fed: Vec<usize> = (0..prefix.len())
                    .filter(|&j| prefix[j].is_question() && outcome_visible[j] && served[j].is_some())
                    .collect();
                let m = fed.len() as i32;
                fed.iter()
                    .enumerate()
                    .map(|(k, &j)| {
                        let y = if prefix[j].correct == Some(true) { 1.0 } else { 0.0 };
                        (1.0 - dec) * dec.powi(m - 1 - k as i32) * (served[j].unwrap() - y)
                    })
                    .sum()
            }
        };
        let column = if d.is_instanced() {
            catalog
                .instance_column(i, &key_of(d.level, e, clusters), e.part)
                .unwrap()
        } else {
            catalog.shared_column(i).unwrap()
        };
        row.push((column, value));
    }
    row
}

/// Brute-force rows for every question of `log`, in log order, with every
/// prior outcome visible and `feed[r]` served for question row `r`.
pub fn brute_force_rows(
    spec: &FeatureSpec,
    clusters: Option<&ClusterModel>,
    catalog: &ColumnCatalog,
    log: &EventLog,
    feed: Option<&[f64]>,
) -> Vec<Vec<(u32, f64)>> {
    let events = log.events();
    let mut row_of = vec![usize::MAX; events.len()];
    let mut r = 0;
    for (i, e) in events.iter().enumerate() {
        if e.is_question() {
            row_of[i] = r;
            r += 1;
        }
    }
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if !e.is_question() {
            continue;
        }
        let prior_idx: Vec<usize> = (0..i).filter(|&j| events[j].student_id == e.student_id).collect();
        let prefix: Vec<&InteractionEvent> = prior_idx.iter().map(|&j| &events[j]).collect();
        let visible = vec![true; prefix.len()];
        let served: Vec<Option<f64>> = prior_idx
            .iter()
            .map(|&j| feed.filter(|_| events[j].is_question()).map(|f| f[row_of[j]]))
            .collect();
        out.push(brute_force_row(spec, clusters, catalog, &prefix, &visible, &served, e));
    }
    out
}

pub fn rows_match(a: &[(u32, f64)], b: &[(u32, f64)], tol: f64) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= tol * y.1.abs().max(1.0))
}

/// Mann-Whitney AUC by comparing every positive with every negative.
pub fn pairwise_auc(p: &[f64], y: &[bool]) -> f64 {
    let mut credit = 0u64;
    let mut pairs = 0u64;
    for i in 0..p.len() {
        if !y[i] {
            continue;
        }
        for j in 0..p.len() {
            if y[j] {
                continue;
            }
            pairs += 1;
            credit += if p[i] > p[j] {
                2
            } else if p[i] == p[j] {
                1
            } else {
                0
            };
        }
    }
    credit as f64 / 2.0 / pairs as f64
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn random_model(log: &EventLog, seed: u64) -> FittedModel {
    let f = kitchen_sink_featurizer();
    let catalog = build_catalog(log, &f).unwrap();
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 0.4).unwrap();
    let coefs = (0..catalog.len()).map(|_| normal.sample(&mut r)).collect();
    FittedModel::new(f, catalog, r.random_range(-0.5..0.5), coefs).unwrap()
}

pub fn oracle_probability(model: &FittedModel, row: &[(u32, f64)]) -> f64 {
    let z = model.bias + row.iter().map(|&(c, v)| model.coefficients[c as usize] * v).sum::<f64>();
    clamp_probability(sigmoid(z))
}

/// Replays a chronological log batch by batch, recomputing every prediction
/// from scratch with in-batch outcomes hidden.
pub fn masking_oracle(model: &FittedModel, log: &EventLog, batch_of: &[usize]) -> Vec<f64> {
    let ev = log.events();
    let clusters = model.clusters().map(|c| c.as_ref());
    let mut served: Vec<Option<f64>> = vec![None; ev.len()];
    let mut out = Vec::new();
    for i in 0..ev.len() {
        if !ev[i].is_question() {
            continue;
        }
        let prior: Vec<usize> = (0..i).filter(|&j| ev[j].student_id == ev[i].student_id).collect();
        let prefix: Vec<_> = prior.iter().map(|&j| &ev[j]).collect();
        let visible: Vec<bool> = prior.iter().map(|&j| batch_of[j] < batch_of[i]).collect();
        let fed: Vec<Option<f64>> = prior.iter().map(|&j| served[j]).collect();
        let row = brute_force_row(model.spec(), clusters, model.catalog(), &prefix, &visible, &fed, &ev[i]);
        let p = oracle_probability(model, &row);
        served[i] = Some(p);
        out.push(p);
    }
    out
}

pub fn run_batches(model: &FittedModel, log: &EventLog, cuts: &[usize], policy: LabelPolicy) -> Vec<f64> {
    let mut store = HistoryStore::new();
    let mut out = Vec::new();
    let mut start = 0;
    for &end in cuts.iter().chain(std::iter::once(&log.len())) {
        let batch = EventLog::from_events(log.events()[start..end].to_vec()).unwrap();
        out.extend(batched_predict(model, &mut store, &batch, policy).unwrap());
        start = end;
    }
    out
}

pub fn random_cuts(r: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..r.random_range(0..8)).map(|_| r.random_range(1..n.max(2))).collect();
    cuts.retain(|&c| c < n);
    cuts.sort_unstable();
    cuts.dedup();
    cuts
}

pub fn batch_index(cuts: &[usize], n: usize) -> Vec<usize> {
    (0..n).map(|i| cuts.iter().filter(|&&c| c <= i).count()).collect()
}
