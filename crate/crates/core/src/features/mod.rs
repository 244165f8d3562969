//! Per-student incremental history and the feature values computed from it.
//!
//! Every feature of an event is computed from history strictly before that
//! event; the event's own outcome is applied afterwards.

mod history;
mod spec;

use std::sync::Arc;

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::event_log::{InteractionEvent, Tags};
use crate::model::{ColumnCatalog, InstanceKey};

pub use history::{HistoryStore, StudentHistory, UnitState};
pub(crate) use history::{read_combo, write_combo};
pub(crate) use spec::format_float;
pub use spec::{Descriptor, FeatureKind, FeatureSpec, Level};

/// A tag combination nested within a part.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TagCombo {
    pub part: u8,
    pub tags: Tags,
}

impl TagCombo {
    pub fn new(part: u8, tags: &[u32]) -> Self {
        TagCombo {
            part,
            tags: crate::event_log::canonical_tags(tags.to_vec()),
        }
    }
}

impl std::fmt::Display for TagCombo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/", self.part)?;
        for (i, t) in self.tags.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

pub fn canonical_combo(event: &InteractionEvent) -> TagCombo {
    TagCombo {
        part: event.part,
        tags: event.tags.clone(),
    }
}

const MS_PER_MINUTE: f64 = 60_000.0;

/// Power-law recency `max(Δt_minutes, 1)^(-d)`; zero without a prior
/// interaction.
pub fn recency_value(now_ms: i64, last_ms: Option<i64>, d: f64) -> Result<f64> {
    match last_ms {
        None => Ok(0.0),
        Some(last) if last > now_ms => Err(Error::Ordering(format!(
            "last interaction at {last} is after now ({now_ms})"
        ))),
        Some(last) => {
            let minutes = ((now_ms - last) as f64 / MS_PER_MINUTE).max(1.0);
            Ok(minutes.powf(-d))
        }
    }
}

/// Geometric down-weighting by trial position: `w * current + 1`.
pub fn update_recency_weighted_count(current: f64, w: f64) -> f64 {
    w * current + 1.0
}

/// Exponentially decaying mean of signed error `prediction − outcome`.
pub fn update_errordec(state: f64, prediction: f64, outcome: bool, dec: f64) -> f64 {
    let y = if outcome { 1.0 } else { 0.0 };
    dec * state + (1.0 - dec) * (prediction - y)
}

/// Sparse feature row: `(column, value)` pairs.
pub type SparseRow = Vec<(u32, f64)>;

const UNIT_LEVELS: usize = 5;

fn unit_index(level: Level) -> Option<usize> {
    match level {
        Level::Item => Some(0),
        Level::Student => Some(1),
        Level::Part => Some(2),
        Level::TagComboInPart => Some(3),
        Level::Cluster => Some(4),
        _ => None,
    }
}

/// Context for one event: its combo and (when clustering is active) crisp
/// cluster.
struct EventUnits {
    combo: TagCombo,
    cluster: Option<u32>,
}

/// A feature spec bound to its cluster model, ready to compute rows and
/// advance histories.
#[derive(Debug, Clone)]
pub struct Featurizer {
    spec: FeatureSpec,
    clusters: Option<Arc<ClusterModel>>,
    /// Slot within its level's `UnitState::weighted` for each weighted-count
    /// descriptor.
    slots: Vec<Option<usize>>,
    weights: [Vec<f64>; UNIT_LEVELS],
    tracked: [bool; UNIT_LEVELS],
}

impl Featurizer {
    pub fn new(spec: FeatureSpec, clusters: Option<Arc<ClusterModel>>) -> Result<Self> {
        if spec.uses_level(Level::Cluster) && clusters.is_none() {
            return Err(Error::param("spec uses the cluster level but no cluster model was given"));
        }
        let mut slots = vec![None; spec.len()];
        let mut weights: [Vec<f64>; UNIT_LEVELS] = Default::default();
        let mut tracked = [false; UNIT_LEVELS];
        tracked[1] = true;
        for (i, d) in spec.descriptors().iter().enumerate() {
            let Some(u) = unit_index(d.level) else { continue };
            if d.kind != FeatureKind::Intercept {
                tracked[u] = true;
            }
            if d.kind == FeatureKind::RecencyWeightedCount {
                slots[i] = Some(weights[u].len());
                weights[u].push(d.param.expect("validated"));
            }
        }
        Ok(Featurizer {
            spec,
            clusters,
            slots,
            weights,
            tracked,
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn clusters(&self) -> Option<&Arc<ClusterModel>> {
        self.clusters.as_ref()
    }

    /// Same bindings with a different spec (e.g. a changed decay parameter).
    pub fn with_spec(&self, spec: FeatureSpec) -> Result<Self> {
        Featurizer::new(spec, self.clusters.clone())
    }

    fn units(&self, event: &InteractionEvent) -> EventUnits {
        let combo = canonical_combo(event);
        let cluster = self.clusters.as_ref().map(|c| c.crisp_of(&combo));
        EventUnits { combo, cluster }
    }

    /// Catalog key of `event` at an instance-bearing level.
    pub fn instance_key(&self, level: Level, event: &InteractionEvent) -> Option<InstanceKey> {
        let units = self.units(event);
        Self::key_for(level, event, &units)
    }

    fn key_for(level: Level, event: &InteractionEvent, units: &EventUnits) -> Option<InstanceKey> {
        Some(match level {
            Level::Item => InstanceKey::Item(event.item_id.clone()),
            Level::Student => InstanceKey::Student(event.student_id.clone()),
            Level::Part => InstanceKey::Part(event.part),
            Level::TagComboInPart => InstanceKey::Combo(units.combo.clone()),
            Level::Cluster => InstanceKey::Cluster(units.cluster?),
            _ => return None,
        })
    }

    fn unit<'h>(
        h: &'h StudentHistory,
        level: Level,
        event: &InteractionEvent,
        units: &EventUnits,
    ) -> Option<&'h UnitState> {
        match level {
            Level::Item => h.items.get(&event.item_id),
            Level::Student => Some(&h.student),
            Level::Part => h.parts.get(&event.part),
            Level::TagComboInPart => h.combos.get(&units.combo),
            Level::Cluster => h.clusters.get(&units.cluster?),
            _ => None,
        }
    }

    /// Appends the feature row for `event` to `out`.
    pub fn featurize_into(
        &self,
        history: &StudentHistory,
        event: &InteractionEvent,
        catalog: &ColumnCatalog,
        out: &mut SparseRow,
    ) -> Result<()> {
        if let Some(last) = history.last_event_ms {
            if event.timestamp_ms <= last {
                return Err(Error::Ordering(format!(
                    "event at {} is not after history end {last} for student {}",
                    event.timestamp_ms, event.student_id
                )));
            }
        }
        let units = self.units(event);
        for (i, d) in self.spec.descriptors().iter().enumerate() {
            let unit = Self::unit(history, d.level, event, &units);
            let count = || -> u32 {
                match d.level {
                    Level::Lecture => history.lecture_count,
                    Level::OverallSuccess => history.overall_successes,
                    Level::OverallFailure => history.overall_failures,
                    _ => unit.map_or(0, |u| u.attempts),
                }
            };
            let value = match d.kind {
                FeatureKind::Intercept => 1.0,
                FeatureKind::Count => count() as f64,
                FeatureKind::LogCount => (count() as f64).ln_1p(),
                FeatureKind::Recency => recency_value(
                    event.timestamp_ms,
                    unit.and_then(|u| u.last_time_ms),
                    d.param.expect("validated"),
                )?,
                FeatureKind::RecencyWeightedCount => {
                    let slot = self.slots[i].expect("slot assigned");
                    unit.and_then(|u| u.weighted.get(slot)).copied().unwrap_or(0.0)
                }
                FeatureKind::Errordec => history.errordec_state,
            };
            let column = if d.is_instanced() {
                let key = Self::key_for(d.level, event, &units)
                    .ok_or_else(|| Error::Catalog(format!("no instance for {}", d.label())))?;
                catalog.instance_column(i, &key, event.part)?
            } else {
                catalog.shared_column(i)?
            };
            out.push((column, value));
        }
        Ok(())
    }

    pub fn featurize(
        &self,
        history: &StudentHistory,
        event: &InteractionEvent,
        catalog: &ColumnCatalog,
    ) -> Result<SparseRow> {
        let mut row = Vec::with_capacity(self.spec.len());
        self.featurize_into(history, event, catalog, &mut row)?;
        Ok(row)
    }

    /// Applies the outcome-independent part of an event: ordering, counts,
    /// last-seen times and weighted counts.
    pub fn apply_exposure(&self, h: &mut StudentHistory, event: &InteractionEvent) -> Result<()> {
        if let Some(last) = h.last_event_ms {
            if event.timestamp_ms <= last {
                return Err(Error::Ordering(format!(
                    "event at {} arrives after {last} for student {}",
                    event.timestamp_ms, event.student_id
                )));
            }
        }
        h.last_event_ms = Some(event.timestamp_ms);
        if !event.is_question() {
            h.lecture_count += 1;
            return Ok(());
        }
        let now = event.timestamp_ms;
        let units = self.units(event);
        let touch = |u: &mut UnitState, weights: &[f64]| {
            u.attempts += 1;
            u.last_time_ms = Some(now);
            if u.weighted.len() != weights.len() {
                u.weighted.resize(weights.len(), 0.0);
            }
            for (x, &w) in u.weighted.iter_mut().zip(weights) {
                *x = update_recency_weighted_count(*x, w);
            }
        };
        touch(&mut h.student, &self.weights[1]);
        if self.tracked[0] {
            touch(h.items.entry(event.item_id.clone()).or_default(), &self.weights[0]);
        }
        if self.tracked[2] {
            touch(h.parts.entry(event.part).or_default(), &self.weights[2]);
        }
        if self.tracked[3] {
            touch(h.combos.entry(units.combo.clone()).or_default(), &self.weights[3]);
        }
        if self.tracked[4] {
            if let Some(c) = units.cluster {
                touch(h.clusters.entry(c).or_default(), &self.weights[4]);
            }
        }
        Ok(())
    }

    /// Applies the outcome-dependent part: success/failure counts and, given
    /// the prediction that was served, the errordec state.
    pub fn apply_outcome(&self, h: &mut StudentHistory, event: &InteractionEvent, prediction: Option<f64>) {
        let Some(correct) = event.correct else { return };
        if correct {
            h.overall_successes += 1;
        } else {
            h.overall_failures += 1;
        }
        if let (Some(p), Some(dec)) = (prediction, self.spec.errordec_param()) {
            h.errordec_state = update_errordec(h.errordec_state, p, correct, dec);
            h.prediction_count += 1;
        }
    }

    /// Advances `h` past `event`.
    pub fn apply_event(&self, h: &mut StudentHistory, event: &InteractionEvent, prediction: Option<f64>) -> Result<()> {
        self.apply_exposure(h, event)?;
        self.apply_outcome(h, event, prediction);
        Ok(())
    }
}
