//! Adaptive practice simulation under pedagogical decision rules.
//!
//! A ground-truth student (item intercept + per-attempt learning + power-law
//! forgetting) answers items chosen by a rule acting on a model's
//! predictions. Failures cost more time than successes.

mod config;

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::event_log::{EventLog, Id, InteractionEvent};
use crate::features::{recency_value, Descriptor, FeatureKind, FeatureSpec, Featurizer, Level, StudentHistory};
use crate::model::{build_catalog, FittedModel, InstanceKey};

pub use config::SimulationConfig;

/// Decision rule mapping pool predictions to the next item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    /// Practise the lowest-p item still at or below `threshold`.
    Mastery { threshold: f64 },
    /// Round-robin over items not yet answered correctly `n` times in a row.
    DropN { n: u32 },
    /// Practise the item whose p is closest to `p_star`.
    TargetDifficulty { p_star: f64 },
}

impl Rule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Rule::Mastery { threshold: t } | Rule::TargetDifficulty { p_star: t } if !(t > 0.0 && t < 1.0) => {
                Err(Error::param(format!("rule probability {t} must be in (0, 1)")))
            }
            Rule::DropN { n: 0 } => Err(Error::param("drop_n needs n >= 1")),
            _ => Ok(()),
        }
    }
}

/// Durations charged per trial; failures also pay feedback time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub success_duration_ms: u64,
    pub failure_duration_multiplier: f64,
    pub feedback_duration_ms: u64,
    pub time_budget_ms: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            success_duration_ms: 20_000,
            failure_duration_multiplier: 1.16,
            feedback_duration_ms: 8_000,
            time_budget_ms: 30 * 60_000,
        }
    }
}

impl Timing {
    pub fn validate(&self) -> Result<()> {
        if !(self.failure_duration_multiplier >= 1.0 && self.failure_duration_multiplier.is_finite()) {
            return Err(Error::param("failure_duration_multiplier must be >= 1"));
        }
        if self.success_duration_ms == 0 {
            return Err(Error::param("success_duration_ms must be positive"));
        }
        Ok(())
    }

    /// Time of a failed trial, feedback included, in whole milliseconds.
    pub fn failure_cost_ms(&self) -> u64 {
        (self.success_duration_ms as f64 * self.failure_duration_multiplier).round() as u64 + self.feedback_duration_ms
    }

    pub fn trial_cost_ms(&self, correct: bool) -> u64 {
        if correct {
            self.success_duration_ms
        } else {
            self.failure_cost_ms()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdrConfig {
    pub name: String,
    pub rule: Rule,
    pub timing: Timing,
}

impl PdrConfig {
    pub fn new(name: &str, rule: Rule, timing: Timing) -> Result<Self> {
        rule.validate()?;
        timing.validate()?;
        Ok(PdrConfig {
            name: name.to_string(),
            rule,
            timing,
        })
    }
}

/// A practice item with its true difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub id: Id,
    pub part: u8,
    pub tags: Vec<u32>,
    /// True logit intercept for an average student.
    pub intercept: f64,
}

/// Population-level ground-truth parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Population {
    pub ability_sd: f64,
    /// Logit increment per prior attempt on an item.
    pub learning_rate: f64,
    /// Coefficient on the item recency term.
    pub recency_weight: f64,
    pub forgetting_d: f64,
}

impl Default for Population {
    fn default() -> Self {
        Population {
            ability_sd: 0.5,
            learning_rate: 0.12,
            recency_weight: 0.8,
            forgetting_d: 0.5,
        }
    }
}

/// Rule-side memory: consecutive-correct streaks and the round-robin cursor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleState {
    streaks: Vec<u32>,
    last_chosen: Option<usize>,
}

impl RuleState {
    pub fn new(pool_len: usize) -> Self {
        RuleState {
            streaks: vec![0; pool_len],
            last_chosen: None,
        }
    }

    pub fn record(&mut self, item: usize, correct: bool) {
        self.streaks[item] = if correct { self.streaks[item] + 1 } else { 0 };
        self.last_chosen = Some(item);
    }
}

/// Index of the next item (pool order = ascending id), or `None` to stop.
pub fn select_item(rule: Rule, predictions: &[f64], state: &RuleState) -> Result<Option<usize>> {
    if predictions.is_empty() {
        return Err(Error::param("empty item pool"));
    }
    if state.streaks.len() != predictions.len() {
        return Err(Error::param("rule state does not match the pool"));
    }
    Ok(match rule {
        Rule::Mastery { threshold } => {
            let mut best: Option<usize> = None;
            for (i, &p) in predictions.iter().enumerate() {
                if p <= threshold && best.is_none_or(|b| p < predictions[b]) {
                    best = Some(i);
                }
            }
            best
        }
        Rule::DropN { n } => {
            let len = predictions.len();
            let start = state.last_chosen.map_or(0, |c| c + 1);
            (0..len).map(|k| (start + k) % len).find(|&i| state.streaks[i] < n)
        }
        Rule::TargetDifficulty { p_star } => {
            let mut best = 0;
            for (i, &p) in predictions.iter().enumerate() {
                if (p - p_star).abs() < (predictions[best] - p_star).abs() {
                    best = i;
                }
            }
            Some(best)
        }
    })
}

/// Ground-truth learner.
#[derive(Debug, Clone)]
pub struct SimStudent {
    pub id: Id,
    pub ability: f64,
    pub population: Population,
    pool: Arc<[PoolItem]>,
    attempts: Vec<u32>,
    last_ms: Vec<Option<i64>>,
}

impl SimStudent {
    /// `pool` must be sorted by item id.
    pub fn new(id: &str, ability: f64, population: Population, pool: Arc<[PoolItem]>) -> Self {
        let n = pool.len();
        SimStudent {
            id: Arc::from(id),
            ability,
            population,
            pool,
            attempts: vec![0; n],
            last_ms: vec![None; n],
        }
    }

    pub fn pool(&self) -> &[PoolItem] {
        &self.pool
    }

    pub fn true_logit(&self, item: usize, now_ms: i64) -> f64 {
        let p = &self.population;
        let rec = recency_value(now_ms, self.last_ms[item], p.forgetting_d).expect("time moves forward");
        self.ability + self.pool[item].intercept + p.learning_rate * self.attempts[item] as f64 + p.recency_weight * rec
    }

    pub fn true_p(&self, item: usize, now_ms: i64) -> f64 {
        crate::model::sigmoid(self.true_logit(item, now_ms))
    }

    pub fn mean_true_p(&self, now_ms: i64) -> f64 {
        (0..self.pool.len()).map(|i| self.true_p(i, now_ms)).sum::<f64>() / self.pool.len() as f64
    }

    pub fn record(&mut self, item: usize, now_ms: i64) {
        self.attempts[item] += 1;
        self.last_ms[item] = Some(now_ms);
    }
}

fn sorted_pool(mut items: Vec<PoolItem>) -> Result<Arc<[PoolItem]>> {
    if items.is_empty() {
        return Err(Error::param("empty item pool"));
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    if items.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::param("duplicate item id in pool"));
    }
    Ok(items.into())
}

/// Model structure shared by the oracle and its perturbations: item
/// intercept, linear item attempt count and item recency.
fn truth_family_model(pool: &[PoolItem], bias: f64, intercept_shift: f64, learning: f64, recency: f64, d: f64) -> Result<FittedModel> {
    let spec = FeatureSpec::new(vec![
        Descriptor::new(FeatureKind::Intercept, Level::Item),
        Descriptor::new(FeatureKind::Count, Level::Item),
        Descriptor::new(FeatureKind::Recency, Level::Item).with_param(d),
    ])?;
    let featurizer = Featurizer::new(spec, None)?;
    let events: Vec<InteractionEvent> = pool
        .iter()
        .enumerate()
        .map(|(t, it)| InteractionEvent::question("pool", &it.id, it.part, &it.tags, t as i64, true))
        .collect();
    let catalog = build_catalog(&EventLog::from_events(events)?, &featurizer)?;
    let mut coef = vec![0.0; catalog.len()];
    for it in pool {
        let c = catalog.instance_column(0, &InstanceKey::Item(it.id.clone()), it.part)?;
        coef[c as usize] = it.intercept + intercept_shift;
    }
    coef[catalog.shared_column(1)? as usize] = learning;
    coef[catalog.shared_column(2)? as usize] = recency;
    FittedModel::new(featurizer, catalog, bias, coef)
}

/// How the decision-making model is obtained for each student.
#[derive(Debug, Clone)]
pub enum SimModel {
    /// The student's true parameters.
    Oracle,
    /// The true structure with distorted parameters; `ability_scale` 0 gives
    /// a model blind to the individual student.
    Perturbed {
        ability_scale: f64,
        learning_scale: f64,
        forgetting_d: Option<f64>,
        intercept_shift: f64,
    },
    /// A fitted model shared by all students.
    Fitted(Arc<FittedModel>),
}

impl SimModel {
    pub fn for_student(&self, s: &SimStudent) -> Result<Arc<FittedModel>> {
        let p = &s.population;
        match self {
            SimModel::Oracle => Ok(Arc::new(truth_family_model(
                s.pool(),
                s.ability,
                0.0,
                p.learning_rate,
                p.recency_weight,
                p.forgetting_d,
            )?)),
            SimModel::Perturbed {
                ability_scale,
                learning_scale,
                forgetting_d,
                intercept_shift,
            } => Ok(Arc::new(truth_family_model(
                s.pool(),
                s.ability * ability_scale,
                *intercept_shift,
                p.learning_rate * learning_scale,
                p.recency_weight,
                forgetting_d.unwrap_or(p.forgetting_d),
            )?)),
            SimModel::Fitted(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub start_ms: i64,
    pub item: String,
    pub chosen: usize,
    /// Model predictions for every pool item (pool order).
    pub predictions: Vec<f64>,
    /// Ground-truth probabilities for every pool item at the same moment.
    pub true_probabilities: Vec<f64>,
    pub correct: bool,
    pub duration_ms: u64,
    pub cumulative_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SessionTotals {
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    /// Pool items whose true p exceeds the mastery threshold at the end.
    pub mastered: usize,
    pub time_used_ms: u64,
    pub start_mean_p: f64,
    pub end_mean_p: f64,
    /// The rule stopped before the budget ran out.
    pub stopped_by_rule: bool,
}

impl SessionTotals {
    /// Change in mean true p over the pool per hour of practice.
    pub fn gain_per_hour(&self) -> f64 {
        if self.time_used_ms == 0 {
            0.0
        } else {
            (self.end_mean_p - self.start_mean_p) / (self.time_used_ms as f64 / 3_600_000.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub trace: Vec<TrialRecord>,
    pub totals: SessionTotals,
}

/// Decisions of a model that watches another model's session.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShadowStats {
    pub steps: usize,
    pub same_choice: usize,
    /// Pool predictions on the same side of the mastery threshold.
    pub band_agreements: usize,
    pub band_total: usize,
}

impl ShadowStats {
    pub fn merge(&mut self, o: &ShadowStats) {
        self.steps += o.steps;
        self.same_choice += o.same_choice;
        self.band_agreements += o.band_agreements;
        self.band_total += o.band_total;
    }
}

struct ModelSide<'a> {
    model: &'a FittedModel,
    history: StudentHistory,
}

impl ModelSide<'_> {
    fn predictions(&self, templates: &mut [InteractionEvent], now: i64) -> Result<Vec<f64>> {
        templates
            .iter_mut()
            .map(|e| {
                e.timestamp_ms = now;
                self.model.predict(&self.history, e)
            })
            .collect()
    }

    fn advance(&mut self, event: &InteractionEvent, prediction: f64) -> Result<()> {
        self.model.featurizer().apply_event(&mut self.history, event, Some(prediction))
    }
}

/// One practice session. `shadows` observe the same stream and report how
/// often they would have chosen the same item.
pub fn run_session(
    student: &SimStudent,
    model: &FittedModel,
    shadows: &[&FittedModel],
    pdr: &PdrConfig,
    mastery_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(SimOutcome, Vec<ShadowStats>)> {
    let mut truth = student.clone();
    let pool_len = truth.pool().len();
    let mut templates: Vec<InteractionEvent> = truth
        .pool()
        .iter()
        .map(|it| InteractionEvent::question(&student.id, &it.id, it.part, &it.tags, 0, false))
        .collect();
    let mut main = ModelSide {
        model,
        history: StudentHistory::new(),
    };
    let mut others: Vec<ModelSide> = shadows
        .iter()
        .map(|m| ModelSide {
            model: m,
            history: StudentHistory::new(),
        })
        .collect();
    let mut stats = vec![ShadowStats::default(); shadows.len()];
    let mut rule_state = RuleState::new(pool_len);
    let budget = pdr.timing.time_budget_ms;
    let mut elapsed: u64 = 0;
    let mut trace = Vec::new();
    let mut totals = SessionTotals {
        start_mean_p: truth.mean_true_p(0),
        ..Default::default()
    };

    loop {
        let now = elapsed as i64;
        let preds = main.predictions(&mut templates, now)?;
        let Some(choice) = select_item(pdr.rule, &preds, &rule_state)? else {
            totals.stopped_by_rule = true;
            break;
        };
        let true_probabilities: Vec<f64> = (0..pool_len).map(|i| truth.true_p(i, now)).collect();
        let correct = rng.random::<f64>() < true_probabilities[choice];
        let duration = pdr.timing.trial_cost_ms(correct);
        if elapsed + duration > budget {
            break;
        }
        for (side, st) in others.iter_mut().zip(stats.iter_mut()) {
            let sp = side.predictions(&mut templates, now)?;
            st.steps += 1;
            if select_item(pdr.rule, &sp, &rule_state)? == Some(choice) {
                st.same_choice += 1;
            }
            st.band_total += pool_len;
            st.band_agreements += sp
                .iter()
                .zip(&preds)
                .filter(|(a, b)| (**a > mastery_threshold) == (**b > mastery_threshold))
                .count();
        }

        let mut event = templates[choice].clone();
        event.timestamp_ms = now;
        event.correct = Some(correct);
        main.advance(&event, preds[choice])?;
        for side in others.iter_mut() {
            let p = side.model.predict(&side.history, &event)?;
            side.advance(&event, p)?;
        }
        truth.record(choice, now);
        rule_state.record(choice, correct);
        elapsed += duration;
        totals.trials += 1;
        if correct {
            totals.successes += 1;
        } else {
            totals.failures += 1;
        }
        trace.push(TrialRecord {
            trial: trace.len(),
            start_ms: now,
            item: truth.pool()[choice].id.to_string(),
            chosen: choice,
            predictions: preds,
            true_probabilities,
            correct,
            duration_ms: duration,
            cumulative_ms: elapsed,
        });
    }
    let end = elapsed as i64;
    totals.time_used_ms = elapsed;
    totals.end_mean_p = truth.mean_true_p(end);
    totals.mastered = (0..pool_len).filter(|&i| truth.true_p(i, end) > mastery_threshold).count();
    Ok((SimOutcome { trace, totals }, stats))
}

/// Outcome randomness for student `index`: one ChaCha stream per student.
pub fn student_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

const ABILITY_SEED_SALT: u64 = 0x5eed_ab11;

/// The `n` simulated students of a population, reproducible under `seed`.
pub fn population_students(population: Population, pool: Vec<PoolItem>, n: usize, seed: u64) -> Result<Vec<SimStudent>> {
    if n == 0 {
        return Err(Error::param("need at least one simulated student"));
    }
    let pool = sorted_pool(pool)?;
    let normal = Normal::new(0.0, population.ability_sd)
        .map_err(|e| Error::param(format!("ability_sd: {e}")))?;
    Ok((0..n)
        .map(|i| {
            let mut rng = student_rng(seed ^ ABILITY_SEED_SALT, i as u64);
            SimStudent::new(&format!("sim{i:05}"), normal.sample(&mut rng), population, pool.clone())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: String,
    pub pdr: String,
    pub students: usize,
    pub mean_trials: f64,
    pub mean_successes: f64,
    pub mean_mastered: f64,
    pub mean_time_used_ms: f64,
    pub mean_gain_per_hour: f64,
    /// Pooled trials per hour of practice.
    pub trials_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub pdr: String,
    /// Model whose decisions drove the sessions.
    pub reference: String,
    pub shadow: String,
    pub steps: usize,
    pub decision_agreement: f64,
    pub threshold_agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub agreement: Vec<AgreementRow>,
}

impl SummaryTable {
    pub fn row(&self, model: &str, pdr: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.model == model && r.pdr == pdr)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "model\tpdr\tstudents\tmean_trials\tmean_successes\tmean_mastered\tmean_time_used_ms\tmean_gain_per_hour\ttrials_per_hour"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.1}\t{:.6}\t{:.4}",
                r.model,
                r.pdr,
                r.students,
                r.mean_trials,
                r.mean_successes,
                r.mean_mastered,
                r.mean_time_used_ms,
                r.mean_gain_per_hour,
                r.trials_per_hour
            )?;
        }
        if !self.agreement.is_empty() {
            writeln!(out)?;
            writeln!(out, "pdr\treference\tshadow\tsteps\tdecision_agreement\tthreshold_agreement")?;
            for a in &self.agreement {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                    a.pdr, a.reference, a.shadow, a.steps, a.decision_agreement, a.threshold_agreement
                )?;
            }
        }
        Ok(())
    }
}

pub fn write_trace_jsonl<W: Write>(outcome: &SimOutcome, mut out: W) -> Result<()> {
    for t in &outcome.trace {
        serde_json::to_writer(&mut out, t)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Runs every (model, pdr) pair over the same simulated students. Each
/// model also shadows every other model's sessions to measure decision
/// agreement on identical streams.
pub fn compare_pdrs(
    students: &[SimStudent],
    models: &[(String, SimModel)],
    pdrs: &[PdrConfig],
    mastery_threshold: f64,
    seed: u64,
) -> Result<SummaryTable> {
    if students.is_empty() || models.is_empty() || pdrs.is_empty() {
        return Err(Error::param("need at least one student, model and pdr"));
    }
    let mut rows = Vec::new();
    let mut agreement = Vec::new();
    for pdr in pdrs {
        for (mi, (name, _)) in models.iter().enumerate() {
            let per_student: Vec<Result<(SessionTotals, Vec<ShadowStats>)>> = students
                .par_iter()
                .enumerate()
                .map(|(si, s)| {
                    let built: Vec<Arc<FittedModel>> =
                        models.iter().map(|(_, m)| m.for_student(s)).collect::<Result<_>>()?;
                    let shadows: Vec<&FittedModel> = built
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != mi)
                        .map(|(_, m)| m.as_ref())
                        .collect();
                    let mut rng = student_rng(seed, si as u64);
                    let (out, stats) = run_session(s, &built[mi], &shadows, pdr, mastery_threshold, &mut rng)?;
                    Ok((out.totals, stats))
                })
                .collect();
            let n = students.len() as f64;
            let mut sum = SessionTotals::default();
            let mut gain = 0.0;
            let mut stats = vec![ShadowStats::default(); models.len() - 1];
            for r in per_student {
                let (t, st) = r?;
                sum.trials += t.trials;
                sum.successes += t.successes;
                sum.mastered += t.mastered;
                sum.time_used_ms += t.time_used_ms;
                gain += t.gain_per_hour();
                for (a, b) in stats.iter_mut().zip(&st) {
                    a.merge(b);
                }
            }
            rows.push(SummaryRow {
                model: name.clone(),
                pdr: pdr.name.clone(),
                students: students.len(),
                mean_trials: sum.trials as f64 / n,
                mean_successes: sum.successes as f64 / n,
                mean_mastered: sum.mastered as f64 / n,
                mean_time_used_ms: sum.time_used_ms as f64 / n,
                mean_gain_per_hour: gain / n,
                trials_per_hour: if sum.time_used_ms > 0 {
                    sum.trials as f64 / (sum.time_used_ms as f64 / 3_600_000.0)
                } else {
                    0.0
                },
            });
            let shadow_names = models.iter().enumerate().filter(|&(j, _)| j != mi).map(|(_, m)| &m.0);
            for (shadow, st) in shadow_names.zip(stats) {
                let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
                agreement.push(AgreementRow {
                    pdr: pdr.name.clone(),
                    reference: name.clone(),
                    shadow: shadow.clone(),
                    steps: st.steps,
                    decision_agreement: ratio(st.same_choice, st.steps),
                    threshold_agreement: ratio(st.band_agreements, st.band_total),
                });
            }
        }
    }
    Ok(SummaryTable { rows, agreement })
}

/// Evenly spaced intercepts over `[lo, hi]` for `n` items named `item000`...
pub fn generate_pool(n: usize, lo: f64, hi: f64) -> Vec<PoolItem> {
    (0..n)
        .map(|i| PoolItem {
            id: Arc::from(format!("item{i:03}").as_str()),
            part: (i % 7) as u8 + 1,
            tags: vec![i as u32],
            intercept: if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mastery_stops_when_everything_is_mastered() {
        let st = RuleState::new(3);
        let r = Rule::Mastery { threshold: 0.95 };
        assert_eq!(select_item(r, &[0.96, 0.99, 0.951], &st).unwrap(), None);
        assert_eq!(select_item(r, &[0.96, 0.5, 0.3], &st).unwrap(), Some(2));
        assert_eq!(select_item(r, &[0.3, 0.5, 0.3], &st).unwrap(), Some(0));
    }

    #[test]
    fn target_difficulty_picks_nearest() {
        let st = RuleState::new(3);
        let r = Rule::TargetDifficulty { p_star: 0.86 };
        assert_eq!(select_item(r, &[0.40, 0.84, 0.99], &st).unwrap(), Some(1));
        // Equal distance: lower id wins.
        let half = Rule::TargetDifficulty { p_star: 0.5 };
        assert_eq!(select_item(half, &[0.75, 0.25], &RuleState::new(2)).unwrap(), Some(0));
    }

    #[test]
    fn drop_n_hand_schedule() {
        // Two items, n = 2. Outcomes drive the schedule:
        // a:ok b:fail a:ok(drop a) b:ok b:ok(drop b) -> stop.
        let r = Rule::DropN { n: 2 };
        let p = [0.5, 0.5];
        let mut st = RuleState::new(2);
        let outcomes = [true, false, true, true, true];
        let mut chosen = Vec::new();
        for &o in &outcomes {
            let c = select_item(r, &p, &st).unwrap().unwrap();
            chosen.push(c);
            st.record(c, o);
        }
        assert_eq!(chosen, vec![0, 1, 0, 1, 1]);
        assert_eq!(select_item(r, &p, &st).unwrap(), None);
    }

    #[test]
    fn empty_pool_is_an_error() {
        assert!(select_item(Rule::DropN { n: 1 }, &[], &RuleState::new(0)).is_err());
    }

    fn one_student() -> SimStudent {
        population_students(Population::default(), generate_pool(6, -2.0, 2.0), 1, 1).unwrap().remove(0)
    }

    #[test]
    fn tiny_budget_gives_empty_trace() {
        let s = one_student();
        let m = SimModel::Oracle.for_student(&s).unwrap();
        let timing = Timing {
            time_budget_ms: 10_000,
            ..Default::default()
        };
        let pdr = PdrConfig::new("t", Rule::TargetDifficulty { p_star: 0.86 }, timing).unwrap();
        let (out, _) = run_session(&s, &m, &[], &pdr, 0.95, &mut student_rng(1, 0)).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.totals.time_used_ms, 0);
    }

    #[test]
    fn oracle_predictions_are_true_probabilities() {
        let s = one_student();
        let m = SimModel::Oracle.for_student(&s).unwrap();
        let pdr = PdrConfig::new("m", Rule::Mastery { threshold: 0.95 }, Timing::default()).unwrap();
        let (out, _) = run_session(&s, &m, &[], &pdr, 0.95, &mut student_rng(1, 0)).unwrap();
        assert!(!out.trace.is_empty());
        for t in &out.trace {
            for (p, q) in t.predictions.iter().zip(&t.true_probabilities) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn model_shadowing_itself_agrees_fully() {
        let students = population_students(Population::default(), generate_pool(8, -2.0, 2.0), 5, 3).unwrap();
        let models = vec![("a".to_string(), SimModel::Oracle), ("b".to_string(), SimModel::Oracle)];
        let pdr = PdrConfig::new("m", Rule::Mastery { threshold: 0.95 }, Timing::default()).unwrap();
        let t = compare_pdrs(&students, &models, &[pdr], 0.95, 9).unwrap();
        assert!(t.agreement.iter().all(|a| a.decision_agreement == 1.0 && a.threshold_agreement == 1.0));
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].mean_trials, t.rows[1].mean_trials);
    }
}
