use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;

use super::{break_ties, canonical_tags, EventKind, EventLog, Id, InteractionEvent, LogOrdering, Tags};
use crate::error::{Error, Result};

/// Maps the engine's event fields onto header names of a delimited file.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub student: String,
    pub item: String,
    pub timestamp: String,
    pub part: String,
    pub tags: String,
    pub correct: String,
    /// When absent, rows with empty correctness are lectures.
    pub kind: Option<String>,
    pub duration: Option<String>,
    pub prior_explanation: Option<String>,
    pub delimiter: u8,
}

impl Schema {
    /// The engine's own column names, as written by [`write_events`].
    pub fn canonical() -> Self {
        Schema {
            student: "student_id".into(),
            item: "item_id".into(),
            timestamp: "timestamp_ms".into(),
            part: "part".into(),
            tags: "tags".into(),
            correct: "correct".into(),
            kind: Some("kind".into()),
            duration: Some("duration_ms".into()),
            prior_explanation: Some("prior_explanation".into()),
            delimiter: b',',
        }
    }

    /// Competition-style `train.csv` joined with question/lecture metadata
    /// (`part`, `tags` columns added).
    pub fn ednet() -> Self {
        Schema {
            student: "user_id".into(),
            item: "content_id".into(),
            timestamp: "timestamp".into(),
            part: "part".into(),
            tags: "tags".into(),
            correct: "answered_correctly".into(),
            kind: Some("content_type_id".into()),
            duration: Some("prior_question_elapsed_time".into()),
            prior_explanation: Some("prior_question_had_explanation".into()),
            delimiter: b',',
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "canonical" => Ok(Self::canonical()),
            "ednet" => Ok(Self::ednet()),
            other => Err(Error::param(format!("unknown schema preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub schema: Schema,
    /// Abort when more than this fraction of rows is malformed...
    pub max_bad_fraction: f64,
    /// ...and the malformed count also exceeds this floor.
    pub bad_row_floor: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            schema: Schema::canonical(),
            max_bad_fraction: 0.01,
            bad_row_floor: 10,
        }
    }
}

impl ParseOptions {
    pub fn with_schema(schema: Schema) -> Self {
        ParseOptions {
            schema,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    /// 1-based line number in the input.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseReport {
    pub rows_read: usize,
    pub events: usize,
    pub bad_rows: Vec<RowError>,
    pub ties_adjusted: usize,
}

struct Columns {
    student: usize,
    item: usize,
    timestamp: usize,
    part: usize,
    tags: usize,
    correct: usize,
    kind: Option<usize>,
    duration: Option<usize>,
    prior_explanation: Option<usize>,
}

fn locate(headers: &csv::StringRecord, schema: &Schema) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let optional = |name: &Option<String>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => Ok(find(n)),
        }
    };
    Ok(Columns {
        student: required(&schema.student)?,
        item: required(&schema.item)?,
        timestamp: required(&schema.timestamp)?,
        part: required(&schema.part)?,
        tags: required(&schema.tags)?,
        correct: required(&schema.correct)?,
        kind: optional(&schema.kind)?,
        duration: optional(&schema.duration)?,
        prior_explanation: optional(&schema.prior_explanation)?,
    })
}

#[derive(Default)]
struct Interner {
    ids: HashSet<Id>,
    tags: std::collections::HashMap<String, Tags>,
}

impl Interner {
    fn id(&mut self, s: &str) -> Id {
        if let Some(v) = self.ids.get(s) {
            return v.clone();
        }
        let v: Id = Arc::from(s);
        self.ids.insert(v.clone());
        v
    }

    fn tags(&mut self, raw: &str) -> std::result::Result<Tags, String> {
        if let Some(t) = self.tags.get(raw) {
            return Ok(t.clone());
        }
        let mut parsed = Vec::new();
        for tok in raw.split_whitespace() {
            parsed.push(tok.parse::<u32>().map_err(|_| format!("bad tag `{tok}`"))?);
        }
        let t = canonical_tags(parsed);
        self.tags.insert(raw.to_string(), t.clone());
        Ok(t)
    }
}

fn parse_bool(raw: &str) -> std::result::Result<Option<bool>, String> {
    match raw.trim() {
        "" | "-1" => Ok(None),
        "1" | "true" | "True" | "TRUE" => Ok(Some(true)),
        "0" | "false" | "False" | "FALSE" => Ok(Some(false)),
        other => Err(format!("bad boolean `{other}`")),
    }
}

fn parse_kind(raw: &str) -> std::result::Result<EventKind, String> {
    match raw.trim() {
        "question" | "q" | "0" => Ok(EventKind::Question),
        "lecture" | "l" | "1" => Ok(EventKind::Lecture),
        other => Err(format!("bad event kind `{other}`")),
    }
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns, interner: &mut Interner) -> std::result::Result<InteractionEvent, String> {
    let field = |i: usize| rec.get(i).ok_or_else(|| format!("missing field {}", i + 1));
    let timestamp_ms: i64 = field(cols.timestamp)?
        .trim()
        .parse()
        .map_err(|_| format!("non-numeric timestamp `{}`", field(cols.timestamp).unwrap_or("")))?;
    let part: u8 = field(cols.part)?
        .trim()
        .parse()
        .map_err(|_| format!("bad part `{}`", field(cols.part).unwrap_or("")))?;
    let tags = interner.tags(field(cols.tags)?)?;
    let correct = parse_bool(field(cols.correct)?)?;
    let kind = match cols.kind {
        Some(k) => parse_kind(field(k)?)?,
        None if correct.is_some() => EventKind::Question,
        None => EventKind::Lecture,
    };
    // Sources such as the competition format put a placeholder label on
    // lectures; it carries no information.
    let correct = if kind == EventKind::Lecture { None } else { correct };
    let trial_duration_ms = match cols.duration {
        Some(c) => {
            let raw = field(c)?.trim();
            if raw.is_empty() {
                None
            } else {
                let v: f64 = raw.parse().map_err(|_| format!("bad duration `{raw}`"))?;
                if v < 0.0 || !v.is_finite() {
                    return Err(format!("negative duration `{raw}`"));
                }
                Some(v as u64)
            }
        }
        None => None,
    };
    let had_prior_explanation = match cols.prior_explanation {
        Some(c) => parse_bool(field(c)?)?,
        None => None,
    };
    let student_id = field(cols.student)?.trim();
    let item_id = field(cols.item)?.trim();
    if student_id.is_empty() || item_id.is_empty() {
        return Err("empty identifier".into());
    }
    let event = InteractionEvent {
        student_id: interner.id(student_id),
        item_id: interner.id(item_id),
        kind,
        part,
        tags,
        timestamp_ms,
        correct,
        trial_duration_ms,
        had_prior_explanation,
    };
    event.validate().map_err(|e| e.to_string())?;
    Ok(event)
}

/// Parses a delimited event stream. Malformed rows are excluded and listed in
/// the report; too many of them abort the parse.
pub fn parse_events<R: Read>(input: R, options: &ParseOptions) -> Result<(EventLog, ParseReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.schema.delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let cols = locate(&headers, &options.schema)?;

    let mut interner = Interner::default();
    let mut events = Vec::new();
    let mut report = ParseReport::default();
    let mut rec = csv::StringRecord::new();
    loop {
        let line = reader.position().line() + 1;
        match reader.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                report.rows_read += 1;
                match parse_row(&rec, &cols, &mut interner) {
                    Ok(e) => events.push(e),
                    Err(message) => report.bad_rows.push(RowError {
                        line: rec.position().map(|p| p.line()).unwrap_or(line),
                        message,
                    }),
                }
            }
            Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                report.rows_read += 1;
                report.bad_rows.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }

    let bad = report.bad_rows.len();
    let limit = (options.max_bad_fraction * report.rows_read as f64).max(options.bad_row_floor as f64);
    if bad as f64 > limit {
        let first = &report.bad_rows[0];
        return Err(Error::TooManyBadRows {
            bad,
            total: report.rows_read,
            first: format!("line {}: {}", first.line, first.message),
        });
    }
    report.ties_adjusted = break_ties(&mut events);
    report.events = events.len();
    if bad > 0 {
        log::warn!("{bad} malformed rows of {} skipped", report.rows_read);
    }
    Ok((EventLog::from_parts(events, LogOrdering::Raw), report))
}

fn bool_field(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

pub(crate) const CANONICAL_HEADER: [&str; 9] = [
    "student_id",
    "item_id",
    "kind",
    "part",
    "tags",
    "timestamp_ms",
    "correct",
    "duration_ms",
    "prior_explanation",
];

pub(crate) fn write_event_record<W: Write>(w: &mut csv::Writer<W>, e: &InteractionEvent) -> Result<()> {
    let mut tags = String::new();
    for (i, t) in e.tags.iter().enumerate() {
        if i > 0 {
            tags.push(' ');
        }
        tags.push_str(&t.to_string());
    }
    let kind = match e.kind {
        EventKind::Question => "question",
        EventKind::Lecture => "lecture",
    };
    let duration = e.trial_duration_ms.map(|d| d.to_string()).unwrap_or_default();
    w.write_record([
        &*e.student_id,
        &*e.item_id,
        kind,
        &e.part.to_string(),
        &tags,
        &e.timestamp_ms.to_string(),
        bool_field(e.correct),
        &duration,
        bool_field(e.had_prior_explanation),
    ])?;
    Ok(())
}

/// Writes `log` in the canonical schema.
pub fn write_events<W: Write>(log: &EventLog, out: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    w.write_record(CANONICAL_HEADER)?;
    for e in log.events() {
        write_event_record(&mut w, e)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "student_id,item_id,kind,part,tags,timestamp_ms,correct,duration_ms,prior_explanation\n\
        u1,q1,question,3,2 5,1000,1,20000,0\n\
        u1,l1,lecture,3,5,2000,,,\n\
        u2,q2,question,1,1 4 7,1500,0,,1\n";

    #[test]
    fn three_well_formed_rows() {
        let (log, report) = parse_events(GOOD.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(log.len(), 3);
        assert!(report.bad_rows.is_empty());
        let e = &log.events()[0];
        assert_eq!(&*e.tags, &[2, 5]);
        assert_eq!(e.correct, Some(true));
        assert_eq!(e.trial_duration_ms, Some(20000));
        assert_eq!(log.events()[1].kind, EventKind::Lecture);
        assert_eq!(log.events()[2].had_prior_explanation, Some(true));
    }

    #[test]
    fn bad_part_is_a_row_error() {
        let text = format!("{GOOD}u3,q9,question,9,1,100,1,,\n");
        let (log, report) = parse_events(text.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(report.bad_rows.len(), 1);
        assert_eq!(report.bad_rows[0].line, 5);
        assert!(report.bad_rows[0].message.contains("part"));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = "student_id,item_id,part,tags,correct\nu,q,1,1,1\n";
        assert!(matches!(
            parse_events(text.as_bytes(), &ParseOptions::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn mass_failure_aborts() {
        let mut text = String::from("student_id,item_id,part,tags,timestamp_ms,correct\n");
        for i in 0..200 {
            text.push_str(&format!("u{i},q,1,1,{},1\n", if i % 10 == 0 { "x".to_string() } else { i.to_string() }));
        }
        let err = parse_events(text.as_bytes(), &ParseOptions::default()).unwrap_err();
        assert!(matches!(err, Error::TooManyBadRows { bad: 20, total: 200, .. }));
    }

    #[test]
    fn kind_inferred_without_kind_column() {
        let text = "student_id,item_id,part,tags,timestamp_ms,correct\nu,q,1,,5,1\nu,l,1,,6,\n";
        let (log, _) = parse_events(text.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(log.events()[1].kind, EventKind::Lecture);
        assert!(log.events()[0].tags.is_empty());
    }

    #[test]
    fn ednet_preset() {
        let text = "row_id,timestamp,user_id,content_id,content_type_id,task_container_id,user_answer,answered_correctly,prior_question_elapsed_time,prior_question_had_explanation,part,tags\n\
            0,0,115,5692,0,1,3,1,,,5,151\n\
            1,56943,115,5716,0,2,2,1,37000.0,False,5,168\n\
            2,118363,115,3153,1,3,-1,-1,55000.0,False,1,131 162 38\n";
        let opts = ParseOptions::with_schema(Schema::ednet());
        let (log, report) = parse_events(text.as_bytes(), &opts).unwrap();
        assert!(report.bad_rows.is_empty());
        assert_eq!(log.events()[2].kind, EventKind::Lecture);
        assert_eq!(log.events()[2].correct, None);
        assert_eq!(&*log.events()[2].tags, &[38, 131, 162]);
        assert_eq!(log.events()[1].trial_duration_ms, Some(37000));
    }

    #[test]
    fn canonical_round_trip() {
        let (log, _) = parse_events(GOOD.as_bytes(), &ParseOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_events(&log, &mut buf, b',').unwrap();
        let (again, _) = parse_events(buf.as_slice(), &ParseOptions::default()).unwrap();
        assert_eq!(again.events(), log.events());
    }
}
