//! Interaction-event logs: ingestion, chronological ordering, simulated time
//! offsets, temporal train/test slicing and user sampling.

mod cache;
mod parse;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use cache::{read_cache, write_cache, CACHE_MAGIC};
pub(crate) use parse::{write_event_record, CANONICAL_HEADER};
pub use parse::{parse_events, write_events, ParseOptions, ParseReport, RowError, Schema};

/// Opaque student or item identifier.
pub type Id = Arc<str>;

/// Canonical (strictly increasing) tag list.
pub type Tags = Arc<[u32]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Question,
    Lecture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEvent {
    pub student_id: Id,
    pub item_id: Id,
    pub kind: EventKind,
    /// 1..=7
    pub part: u8,
    pub tags: Tags,
    pub timestamp_ms: i64,
    /// Present iff `kind == Question`.
    pub correct: Option<bool>,
    pub trial_duration_ms: Option<u64>,
    pub had_prior_explanation: Option<bool>,
}

pub const MIN_PART: u8 = 1;
pub const MAX_PART: u8 = 7;

impl InteractionEvent {
    pub fn question(
        student: &str,
        item: &str,
        part: u8,
        tags: &[u32],
        timestamp_ms: i64,
        correct: bool,
    ) -> Self {
        InteractionEvent {
            student_id: Arc::from(student),
            item_id: Arc::from(item),
            kind: EventKind::Question,
            part,
            tags: canonical_tags(tags.to_vec()),
            timestamp_ms,
            correct: Some(correct),
            trial_duration_ms: None,
            had_prior_explanation: None,
        }
    }

    pub fn lecture(student: &str, item: &str, part: u8, tags: &[u32], timestamp_ms: i64) -> Self {
        InteractionEvent {
            student_id: Arc::from(student),
            item_id: Arc::from(item),
            kind: EventKind::Lecture,
            part,
            tags: canonical_tags(tags.to_vec()),
            timestamp_ms,
            correct: None,
            trial_duration_ms: None,
            had_prior_explanation: None,
        }
    }

    pub fn is_question(&self) -> bool {
        self.kind == EventKind::Question
    }

    /// Checks the per-event invariants.
    pub fn validate(&self) -> Result<()> {
        if !(MIN_PART..=MAX_PART).contains(&self.part) {
            return Err(Error::param(format!("part {} outside 1..7", self.part)));
        }
        if self.tags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("tags are not strictly increasing"));
        }
        match (self.kind, self.correct) {
            (EventKind::Question, None) => Err(Error::param("question event without correctness")),
            (EventKind::Lecture, Some(_)) => Err(Error::param("lecture event carries correctness")),
            _ => Ok(()),
        }
    }
}

/// Sorts and deduplicates a tag list.
pub fn canonical_tags(mut tags: Vec<u32>) -> Tags {
    tags.sort_unstable();
    tags.dedup();
    Arc::from(tags)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogOrdering {
    Raw,
    PerStudentChronological,
    GloballyChronological,
}

impl LogOrdering {
    pub(crate) fn code(self) -> u8 {
        match self {
            LogOrdering::Raw => 0,
            LogOrdering::PerStudentChronological => 1,
            LogOrdering::GloballyChronological => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => LogOrdering::Raw,
            1 => LogOrdering::PerStudentChronological,
            2 => LogOrdering::GloballyChronological,
            _ => return Err(Error::Format(format!("bad ordering code {c}"))),
        })
    }
}

/// An immutable sequence of events.
///
/// Within a student, timestamps are strictly increasing: equal timestamps are
/// separated at construction by nudging later rows forward one millisecond
/// in their original row order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    events: Vec<InteractionEvent>,
    ordering: LogOrdering,
}

impl EventLog {
    /// Validates events and breaks within-student timestamp ties.
    pub fn from_events(mut events: Vec<InteractionEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            e.validate()
                .map_err(|err| Error::param(format!("event {i}: {err}")))?;
        }
        break_ties(&mut events);
        Ok(EventLog {
            events,
            ordering: LogOrdering::Raw,
        })
    }

    /// Wraps events already known to satisfy every invariant.
    pub(crate) fn from_parts(events: Vec<InteractionEvent>, ordering: LogOrdering) -> Self {
        EventLog { events, ordering }
    }

    pub fn empty() -> Self {
        EventLog {
            events: Vec::new(),
            ordering: LogOrdering::GloballyChronological,
        }
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<InteractionEvent> {
        self.events
    }

    pub fn ordering(&self) -> LogOrdering {
        self.ordering
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn question_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_question()).count()
    }

    /// Distinct students in order of first appearance.
    pub fn students(&self) -> Vec<Id> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for e in &self.events {
            if seen.insert(e.student_id.clone()) {
                out.push(e.student_id.clone());
            }
        }
        out
    }

    /// Event indices per student (students in first-appearance order), each
    /// list in chronological order.
    pub fn student_groups(&self) -> Vec<(Id, Vec<usize>)> {
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<(Id, Vec<usize>)> = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            let g = *slot.entry(&e.student_id).or_insert_with(|| {
                groups.push((e.student_id.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(i);
        }
        if self.ordering == LogOrdering::Raw {
            for (_, idx) in &mut groups {
                idx.sort_by_key(|&i| self.events[i].timestamp_ms);
            }
        }
        groups
    }

    /// Keeps the events selected by `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(&InteractionEvent) -> bool) -> EventLog {
        EventLog {
            events: self.events.iter().filter(|e| keep(e)).cloned().collect(),
            ordering: self.ordering,
        }
    }
}

/// Nudges equal within-student timestamps apart in row order. Returns the
/// number of events moved.
pub(crate) fn break_ties(events: &mut [InteractionEvent]) -> usize {
    let mut by_student: HashMap<Id, Vec<usize>> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        by_student.entry(e.student_id.clone()).or_default().push(i);
    }
    let mut moved = 0;
    for idx in by_student.values_mut() {
        idx.sort_by_key(|&i| events[i].timestamp_ms);
        let mut prev: Option<i64> = None;
        for &i in idx.iter() {
            let ts = events[i].timestamp_ms;
            if let Some(p) = prev {
                if ts <= p {
                    events[i].timestamp_ms = p + 1;
                    moved += 1;
                }
            }
            prev = Some(events[i].timestamp_ms);
        }
    }
    moved
}

/// Shifts each student's events by one uniform draw in `[0, horizon_ms)`.
///
/// Draws are taken in ascending student-id order from a seeded generator, so
/// a student's offset does not depend on row order.
pub fn assign_simulated_offsets(log: &EventLog, horizon_ms: i64, seed: u64) -> Result<EventLog> {
    if horizon_ms <= 0 {
        return Err(Error::param(format!("horizon_ms must be positive, got {horizon_ms}")));
    }
    let students: BTreeSet<&str> = log.events.iter().map(|e| &*e.student_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: HashMap<&str, i64> = students
        .into_iter()
        .map(|s| (s, rng.random_range(0..horizon_ms)))
        .collect();
    let events = log
        .events
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.timestamp_ms += offsets[&*e.student_id];
            e
        })
        .collect();
    let ordering = match log.ordering {
        LogOrdering::Raw => LogOrdering::Raw,
        _ => LogOrdering::PerStudentChronological,
    };
    Ok(EventLog { events, ordering })
}

/// Stable global sort by timestamp.
pub fn sort_chronological(log: &EventLog) -> EventLog {
    let mut events = log.events.clone();
    events.par_sort_by_key(|e| e.timestamp_ms);
    EventLog {
        events,
        ordering: LogOrdering::GloballyChronological,
    }
}

/// A later-time test window plus the earlier history of its students.
#[derive(Debug, Clone)]
pub struct TemporalSplit {
    pub train: EventLog,
    pub test: EventLog,
    pub slice_start_fraction: f64,
    pub slice_end_fraction: f64,
}

impl TemporalSplit {
    /// Exhaustively checks the split invariants.
    pub fn audit(&self) -> Result<()> {
        if self
            .test
            .events
            .windows(2)
            .any(|w| w[1].timestamp_ms < w[0].timestamp_ms)
        {
            return Err(Error::Ordering("test slice is not chronological".into()));
        }
        let mut first_test: HashMap<&str, i64> = HashMap::new();
        for e in &self.test.events {
            first_test.entry(&e.student_id).or_insert(e.timestamp_ms);
        }
        for e in &self.train.events {
            match first_test.get(&*e.student_id) {
                None => {
                    return Err(Error::Ordering(format!(
                        "train student {} has no test events",
                        e.student_id
                    )))
                }
                Some(&t) if e.timestamp_ms >= t => {
                    return Err(Error::Ordering(format!(
                        "train event of {} at {} is not before first test event at {t}",
                        e.student_id, e.timestamp_ms
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Test = rows `[floor(start*N), floor(end*N))` of a chronological log;
/// train = every earlier row of a student present in the test slice.
pub fn temporal_slice(log: &EventLog, start_fraction: f64, end_fraction: f64) -> Result<TemporalSplit> {
    if log.ordering != LogOrdering::GloballyChronological {
        return Err(Error::Ordering("temporal_slice needs a globally chronological log".into()));
    }
    if !(0.0..1.0).contains(&start_fraction)
        || !(end_fraction > start_fraction && end_fraction <= 1.0)
    {
        return Err(Error::param(format!(
            "need 0 <= start < end <= 1, got {start_fraction}..{end_fraction}"
        )));
    }
    let n = log.len();
    let lo = (start_fraction * n as f64).floor() as usize;
    let hi = ((end_fraction * n as f64).floor() as usize).min(n);
    if hi <= lo {
        return Err(Error::param(format!(
            "slice {start_fraction}..{end_fraction} of {n} rows is empty"
        )));
    }
    let test_events = log.events[lo..hi].to_vec();
    let test_students: HashSet<&str> = test_events.iter().map(|e| &*e.student_id).collect();
    let train_events = log.events[..lo]
        .iter()
        .filter(|e| test_students.contains(&*e.student_id))
        .cloned()
        .collect();
    Ok(TemporalSplit {
        train: EventLog {
            events: train_events,
            ordering: LogOrdering::GloballyChronological,
        },
        test: EventLog {
            events: test_events,
            ordering: LogOrdering::GloballyChronological,
        },
        slice_start_fraction: start_fraction,
        slice_end_fraction: end_fraction,
    })
}

/// Keeps every event of `min(n, #students)` uniformly sampled students.
///
/// Selection sampling over students in ascending id order: each student is
/// taken with probability `needed / remaining`.
pub fn sample_users(log: &EventLog, n: usize, seed: u64) -> Result<EventLog> {
    if n == 0 {
        return Err(Error::param("sample size must be at least 1"));
    }
    let students: BTreeSet<&str> = log.events.iter().map(|e| &*e.student_id).collect();
    let mut needed = n.min(students.len());
    let mut remaining = students.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<&str> = HashSet::with_capacity(needed);
    for s in students {
        if needed == 0 {
            break;
        }
        let u: f64 = rng.random();
        if u * (remaining as f64) < needed as f64 {
            chosen.insert(s);
            needed -= 1;
        }
        remaining -= 1;
    }
    Ok(log.filter(|e| chosen.contains(&*e.student_id)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str, t: i64) -> InteractionEvent {
        InteractionEvent::question(s, "i1", 1, &[1], t, true)
    }

    #[test]
    fn event_invariants() {
        let mut e = q("a", 0);
        assert!(e.validate().is_ok());
        e.part = 9;
        assert!(e.validate().is_err());
        let mut e = q("a", 0);
        e.correct = None;
        assert!(e.validate().is_err());
        let mut l = InteractionEvent::lecture("a", "l1", 2, &[], 0);
        assert!(l.validate().is_ok());
        l.correct = Some(true);
        assert!(l.validate().is_err());
        assert_eq!(&*InteractionEvent::question("a", "i", 1, &[7, 1, 4], 0, true).tags, &[1, 4, 7]);
    }

    #[test]
    fn ties_are_broken_in_row_order() {
        let log = EventLog::from_events(vec![q("a", 5), q("b", 5), q("a", 5), q("a", 6)]).unwrap();
        let ts: Vec<_> = log.events().iter().map(|e| e.timestamp_ms).collect();
        assert_eq!(ts, [5, 5, 6, 7]);
    }

    #[test]
    fn degenerate_horizon_leaves_times() {
        let log = EventLog::from_events(vec![q("a", 0), q("b", 10)]).unwrap();
        let out = assign_simulated_offsets(&log, 1, 3).unwrap();
        assert_eq!(out.events(), log.events());
        assert!(assign_simulated_offsets(&log, 0, 3).is_err());
    }

    #[test]
    fn offsets_preserve_gaps_and_are_seeded() {
        let log = EventLog::from_events(vec![q("a", 0), q("a", 500), q("a", 1200), q("b", 7)]).unwrap();
        let a = assign_simulated_offsets(&log, 365 * 86_400_000, 11).unwrap();
        let b = assign_simulated_offsets(&log, 365 * 86_400_000, 11).unwrap();
        assert_eq!(a, b);
        let ts: Vec<_> = a.events()[..3].iter().map(|e| e.timestamp_ms).collect();
        assert_eq!([ts[1] - ts[0], ts[2] - ts[1]], [500, 700]);
    }

    #[test]
    fn sort_is_stable_and_forward() {
        let log = EventLog::from_events((0..5).rev().map(|t| q(&format!("s{t}"), t)).collect()).unwrap();
        let sorted = sort_chronological(&log);
        let ts: Vec<_> = sorted.events().iter().map(|e| e.timestamp_ms).collect();
        assert_eq!(ts, [0, 1, 2, 3, 4]);
        assert_eq!(sort_chronological(&sorted).events(), sorted.events());

        let tied = EventLog::from_events(vec![q("x", 1), q("y", 1), q("z", 0)]).unwrap();
        let ids: Vec<_> = sort_chronological(&tied)
            .events()
            .iter()
            .map(|e| e.student_id.to_string())
            .collect();
        assert_eq!(ids, ["z", "x", "y"]);
    }

    #[test]
    fn whole_log_slice_has_empty_train() {
        let log = sort_chronological(&EventLog::from_events(vec![q("a", 0), q("b", 1), q("a", 2)]).unwrap());
        let split = temporal_slice(&log, 0.0, 1.0).unwrap();
        assert_eq!(split.test.len(), 3);
        assert!(split.train.is_empty());
        split.audit().unwrap();
        assert!(temporal_slice(&log, 0.5, 0.5).is_err());
        assert!(temporal_slice(&log, 0.1, 0.2).is_err());
        let raw = EventLog::from_events(vec![q("a", 0)]).unwrap();
        assert!(matches!(temporal_slice(&raw, 0.0, 1.0), Err(Error::Ordering(_))));
    }

    #[test]
    fn sampling_edges() {
        let log = EventLog::from_events(vec![q("a", 0), q("b", 1), q("c", 2), q("a", 3)]).unwrap();
        assert_eq!(sample_users(&log, 10, 1).unwrap(), log);
        let one = sample_users(&log, 1, 42).unwrap();
        let ids: HashSet<_> = one.events().iter().map(|e| e.student_id.clone()).collect();
        assert_eq!(ids.len(), 1);
        let id = ids.into_iter().next().unwrap();
        let expected = log.events().iter().filter(|e| e.student_id == id).count();
        assert_eq!(one.len(), expected);
        assert!(sample_users(&log, 0, 1).is_err());
    }
}
