//! Columnar binary cache for fast reload of parsed logs.
//!
//! Layout (little endian): magic `LKTEVLOG`, version u32, ordering u8, row
//! count, then dictionaries (ids, tag lists) in first-appearance order and
//! one contiguous array per column.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use super::{EventKind, EventLog, Id, InteractionEvent, LogOrdering, Tags};
use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"LKTEVLOG";
const CACHE_VERSION: u32 = 1;

fn opt_bool_code(v: Option<bool>) -> u8 {
    match v {
        None => 2,
        Some(false) => 0,
        Some(true) => 1,
    }
}

fn opt_bool_from(c: u8) -> Result<Option<bool>> {
    match c {
        0 => Ok(Some(false)),
        1 => Ok(Some(true)),
        2 => Ok(None),
        _ => Err(Error::Format(format!("bad boolean code {c}"))),
    }
}

pub fn write_cache<W: Write>(log: &EventLog, out: W) -> Result<()> {
    let mut w = BinWriter::new(out);
    w.bytes(CACHE_MAGIC)?;
    w.u32(CACHE_VERSION)?;
    w.u8(log.ordering().code())?;
    let events = log.events();
    w.len(events.len())?;

    let mut id_codes: HashMap<&str, u32> = HashMap::new();
    let mut ids: Vec<&str> = Vec::new();
    let mut tag_codes: HashMap<&[u32], u32> = HashMap::new();
    let mut tag_lists: Vec<&[u32]> = Vec::new();

    let mut student_col = Vec::with_capacity(events.len());
    let mut item_col = Vec::with_capacity(events.len());
    let mut tag_col = Vec::with_capacity(events.len());
    for e in events {
        for (s, col) in [(&e.student_id, &mut student_col), (&e.item_id, &mut item_col)] {
            let code = *id_codes.entry(&**s).or_insert_with(|| {
                ids.push(&**s);
                (ids.len() - 1) as u32
            });
            col.push(code);
        }
        let code = *tag_codes.entry(&*e.tags).or_insert_with(|| {
            tag_lists.push(&*e.tags);
            (tag_lists.len() - 1) as u32
        });
        tag_col.push(code);
    }

    w.len(ids.len())?;
    for s in &ids {
        w.str(s)?;
    }
    w.len(tag_lists.len())?;
    for t in &tag_lists {
        w.len(t.len())?;
        for &x in t.iter() {
            w.u32(x)?;
        }
    }
    for &c in &student_col {
        w.u32(c)?;
    }
    for &c in &item_col {
        w.u32(c)?;
    }
    for e in events {
        w.u8(match e.kind {
            EventKind::Question => 0,
            EventKind::Lecture => 1,
        })?;
    }
    for e in events {
        w.u8(e.part)?;
    }
    for &c in &tag_col {
        w.u32(c)?;
    }
    for e in events {
        w.i64(e.timestamp_ms)?;
    }
    for e in events {
        w.u8(opt_bool_code(e.correct))?;
    }
    for e in events {
        match e.trial_duration_ms {
            Some(d) => {
                w.u8(1)?;
                w.u64(d)?;
            }
            None => w.u8(0)?,
        }
    }
    for e in events {
        w.u8(opt_bool_code(e.had_prior_explanation))?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn read_cache<R: Read>(input: R) -> Result<EventLog> {
    let mut r = BinReader::new(input);
    let version = r.expect_magic(CACHE_MAGIC, "event cache")?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let ordering = LogOrdering::from_code(r.u8()?)?;
    let n = r.len()?;

    let n_ids = r.len()?;
    let mut ids: Vec<Id> = Vec::with_capacity(n_ids);
    for _ in 0..n_ids {
        ids.push(Arc::from(r.str()?));
    }
    let n_tags = r.len()?;
    let mut tag_lists: Vec<Tags> = Vec::with_capacity(n_tags);
    for _ in 0..n_tags {
        let len = r.len()?;
        let mut t = Vec::with_capacity(len);
        for _ in 0..len {
            t.push(r.u32()?);
        }
        tag_lists.push(Arc::from(t));
    }
    let lookup_id = |c: u32| -> Result<Id> {
        ids.get(c as usize)
            .cloned()
            .ok_or_else(|| Error::Format(format!("id code {c} out of range")))
    };

    let mut students = Vec::with_capacity(n);
    for _ in 0..n {
        students.push(lookup_id(r.u32()?)?);
    }
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        items.push(lookup_id(r.u32()?)?);
    }
    let mut kinds = Vec::with_capacity(n);
    for _ in 0..n {
        kinds.push(match r.u8()? {
            0 => EventKind::Question,
            1 => EventKind::Lecture,
            k => return Err(Error::Format(format!("bad kind code {k}"))),
        });
    }
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        parts.push(r.u8()?);
    }
    let mut tags = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.u32()?;
        tags.push(
            tag_lists
                .get(c as usize)
                .cloned()
                .ok_or_else(|| Error::Format(format!("tag code {c} out of range")))?,
        );
    }
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        times.push(r.i64()?);
    }
    let mut correct = Vec::with_capacity(n);
    for _ in 0..n {
        correct.push(opt_bool_from(r.u8()?)?);
    }
    let mut durations = Vec::with_capacity(n);
    for _ in 0..n {
        durations.push(match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            t => return Err(Error::Format(format!("bad option tag {t}"))),
        });
    }
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let e = InteractionEvent {
            student_id: students[i].clone(),
            item_id: items[i].clone(),
            kind: kinds[i],
            part: parts[i],
            tags: tags[i].clone(),
            timestamp_ms: times[i],
            correct: correct[i],
            trial_duration_ms: durations[i],
            had_prior_explanation: opt_bool_from(r.u8()?)?,
        };
        e.validate()
            .map_err(|err| Error::Format(format!("cached event {i}: {err}")))?;
        events.push(e);
    }
    Ok(EventLog::from_parts(events, ordering))
}
