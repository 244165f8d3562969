use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use super::TagCombo;
use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::event_log::Id;

/// Practice state for one unit (an item, part, combo or cluster).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitState {
    pub attempts: u32,
    pub last_time_ms: Option<i64>,
    /// One recency-weighted count per weighted-count descriptor on this level.
    pub weighted: Vec<f64>,
}

/// Everything the feature engine remembers about one student.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudentHistory {
    pub overall_successes: u32,
    pub overall_failures: u32,
    pub lecture_count: u32,
    /// Decayed mean signed error (prediction − outcome).
    pub errordec_state: f64,
    pub prediction_count: u32,
    /// Timestamp of the last applied event of any kind.
    pub last_event_ms: Option<i64>,
    /// Question practice pooled over everything.
    pub student: UnitState,
    pub items: HashMap<Id, UnitState>,
    pub parts: BTreeMap<u8, UnitState>,
    pub combos: HashMap<TagCombo, UnitState>,
    pub clusters: HashMap<u32, UnitState>,
}

impl StudentHistory {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Histories keyed by student, exportable as a versioned binary snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryStore {
    pub histories: HashMap<Id, StudentHistory>,
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"LKTHIST\0";
const SNAPSHOT_VERSION: u32 = 1;

impl HistoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_new(&mut self, student: &Id) -> &mut StudentHistory {
        self.histories.entry(student.clone()).or_default()
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    /// Writes students in ascending id order and every table sorted by key,
    /// so equal stores produce identical bytes.
    pub fn write_snapshot<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BinWriter::new(out);
        w.bytes(SNAPSHOT_MAGIC)?;
        w.u32(SNAPSHOT_VERSION)?;
        let mut ids: Vec<&Id> = self.histories.keys().collect();
        ids.sort();
        w.len(ids.len())?;
        for id in ids {
            let h = &self.histories[id];
            w.str(id)?;
            w.u32(h.overall_successes)?;
            w.u32(h.overall_failures)?;
            w.u32(h.lecture_count)?;
            w.f64(h.errordec_state)?;
            w.u32(h.prediction_count)?;
            w.opt_i64(h.last_event_ms)?;
            write_unit(&mut w, &h.student)?;

            let mut items: Vec<_> = h.items.iter().collect();
            items.sort_by(|a, b| a.0.cmp(b.0));
            w.len(items.len())?;
            for (k, u) in items {
                w.str(k)?;
                write_unit(&mut w, u)?;
            }
            w.len(h.parts.len())?;
            for (k, u) in &h.parts {
                w.u8(*k)?;
                write_unit(&mut w, u)?;
            }
            let mut combos: Vec<_> = h.combos.iter().collect();
            combos.sort_by(|a, b| a.0.cmp(b.0));
            w.len(combos.len())?;
            for (k, u) in combos {
                write_combo(&mut w, k)?;
                write_unit(&mut w, u)?;
            }
            let mut clusters: Vec<_> = h.clusters.iter().collect();
            clusters.sort_by_key(|(k, _)| **k);
            w.len(clusters.len())?;
            for (k, u) in clusters {
                w.u32(*k)?;
                write_unit(&mut w, u)?;
            }
        }
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(input: R) -> Result<Self> {
        let mut r = BinReader::new(input);
        let version = r.expect_magic(SNAPSHOT_MAGIC, "history snapshot")?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let n = r.len()?;
        let mut histories = HashMap::with_capacity(n);
        for _ in 0..n {
            let id: Id = Arc::from(r.str()?);
            let mut h = StudentHistory {
                overall_successes: r.u32()?,
                overall_failures: r.u32()?,
                lecture_count: r.u32()?,
                errordec_state: r.f64()?,
                prediction_count: r.u32()?,
                last_event_ms: r.opt_i64()?,
                student: read_unit(&mut r)?,
                ..Default::default()
            };
            for _ in 0..r.len()? {
                let k: Id = Arc::from(r.str()?);
                h.items.insert(k, read_unit(&mut r)?);
            }
            for _ in 0..r.len()? {
                let k = r.u8()?;
                h.parts.insert(k, read_unit(&mut r)?);
            }
            for _ in 0..r.len()? {
                let k = read_combo(&mut r)?;
                h.combos.insert(k, read_unit(&mut r)?);
            }
            for _ in 0..r.len()? {
                let k = r.u32()?;
                h.clusters.insert(k, read_unit(&mut r)?);
            }
            histories.insert(id, h);
        }
        Ok(HistoryStore { histories })
    }
}

fn write_unit<W: Write>(w: &mut BinWriter<W>, u: &UnitState) -> Result<()> {
    w.u32(u.attempts)?;
    w.opt_i64(u.last_time_ms)?;
    w.len(u.weighted.len())?;
    for &x in &u.weighted {
        w.f64(x)?;
    }
    Ok(())
}

fn read_unit<R: Read>(r: &mut BinReader<R>) -> Result<UnitState> {
    let attempts = r.u32()?;
    let last_time_ms = r.opt_i64()?;
    let n = r.len()?;
    let mut weighted = Vec::with_capacity(n);
    for _ in 0..n {
        weighted.push(r.f64()?);
    }
    Ok(UnitState {
        attempts,
        last_time_ms,
        weighted,
    })
}

pub(crate) fn write_combo<W: Write>(w: &mut BinWriter<W>, c: &TagCombo) -> Result<()> {
    w.u8(c.part)?;
    w.len(c.tags.len())?;
    for &t in c.tags.iter() {
        w.u32(t)?;
    }
    Ok(())
}

pub(crate) fn read_combo<R: Read>(r: &mut BinReader<R>) -> Result<TagCombo> {
    let part = r.u8()?;
    let n = r.len()?;
    let mut tags = Vec::with_capacity(n);
    for _ in 0..n {
        tags.push(r.u32()?);
    }
    Ok(TagCombo {
        part,
        tags: Arc::from(tags),
    })
}
