use rayon::prelude::*;

use super::FittedModel;
use crate::error::Result;
use crate::event_log::{EventLog, InteractionEvent};
use crate::features::{HistoryStore, StudentHistory};

/// When the outcome of a predicted trial becomes visible to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Outcomes are released only after the whole batch is predicted;
    /// counts and times still advance within the batch.
    Withheld,
    /// Each outcome is applied before the next trial.
    Immediate,
}

/// Runs one student's events; returns `(event index, prediction)` pairs.
fn run_student(
    model: &FittedModel,
    h: &mut StudentHistory,
    events: &[InteractionEvent],
    idxs: &[usize],
    policy: LabelPolicy,
    emit: bool,
) -> Result<Vec<(usize, f64)>> {
    let f = model.featurizer();
    let needs_prediction = emit || model.spec().errordec_index().is_some();
    let mut out = Vec::new();
    let mut pending = Vec::new();
    for &i in idxs {
        let e = &events[i];
        if !e.is_question() {
            f.apply_event(h, e, None)?;
            continue;
        }
        let p = if needs_prediction {
            Some(model.predict(h, e)?)
        } else {
            None
        };
        if let (true, Some(p)) = (emit, p) {
            out.push((i, p));
        }
        match policy {
            LabelPolicy::Immediate => f.apply_event(h, e, p)?,
            LabelPolicy::Withheld => {
                f.apply_exposure(h, e)?;
                pending.push((i, p));
            }
        }
    }
    for (i, p) in pending {
        f.apply_outcome(h, &events[i], p);
    }
    Ok(out)
}

fn run_log(
    model: &FittedModel,
    store: &mut HistoryStore,
    batch: &EventLog,
    policy: LabelPolicy,
    emit: bool,
) -> Result<Vec<f64>> {
    let events = batch.events();
    let groups = batch.student_groups();
    let mut work: Vec<(StudentHistory, &[usize])> = groups
        .iter()
        .map(|(id, idxs)| (store.histories.remove(id).unwrap_or_default(), idxs.as_slice()))
        .collect();
    let results: Vec<Result<Vec<(usize, f64)>>> = work
        .par_iter_mut()
        .map(|(h, idxs)| run_student(model, h, events, idxs, policy, emit))
        .collect();
    for ((id, _), (h, _)) in groups.iter().zip(work) {
        store.histories.insert(id.clone(), h);
    }
    let mut by_event = vec![f64::NAN; if emit { events.len() } else { 0 }];
    for r in results {
        for (i, p) in r? {
            by_event[i] = p;
        }
    }
    Ok(events
        .iter()
        .zip(by_event)
        .filter(|(e, _)| e.is_question())
        .map(|(_, p)| p)
        .collect())
}

/// Predicts every question of a time-ordered batch (in log order) and
/// advances the histories under `policy`.
pub fn batched_predict(
    model: &FittedModel,
    histories: &mut HistoryStore,
    batch: &EventLog,
    policy: LabelPolicy,
) -> Result<Vec<f64>> {
    run_log(model, histories, batch, policy, true)
}

/// A model together with the live histories it serves.
pub struct Predictor<'m> {
    model: &'m FittedModel,
    histories: HistoryStore,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m FittedModel) -> Self {
        Predictor {
            model,
            histories: HistoryStore::new(),
        }
    }

    pub fn with_histories(model: &'m FittedModel, histories: HistoryStore) -> Self {
        Predictor { model, histories }
    }

    pub fn histories(&self) -> &HistoryStore {
        &self.histories
    }

    pub fn into_histories(self) -> HistoryStore {
        self.histories
    }

    /// Absorbs events without reporting predictions (history backfill).
    pub fn observe(&mut self, log: &EventLog) -> Result<()> {
        run_log(self.model, &mut self.histories, log, LabelPolicy::Immediate, false).map(|_| ())
    }

    /// Predictions for every question of `log`, updating after each trial.
    pub fn score(&mut self, log: &EventLog) -> Result<Vec<f64>> {
        run_log(self.model, &mut self.histories, log, LabelPolicy::Immediate, true)
    }

    pub fn score_batch(&mut self, batch: &EventLog, policy: LabelPolicy) -> Result<Vec<f64>> {
        run_log(self.model, &mut self.histories, batch, policy, true)
    }
}
