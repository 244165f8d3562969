use std::collections::HashMap;

use rayon::prelude::*;

use super::ColumnCatalog;
use crate::error::{Error, Result};
use crate::event_log::{EventLog, Id, InteractionEvent};
use crate::features::{Featurizer, SparseRow, StudentHistory};

/// Row-compressed design matrix with one row per question event.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_columns: usize,
    indptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    labels: Vec<bool>,
}

impl DesignMatrix {
    /// Builds a matrix from explicit rows; column indices must be below
    /// `n_columns`.
    pub fn from_rows(rows: &[SparseRow], labels: &[bool], n_columns: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::param("one label per row is required"));
        }
        let mut m = DesignMatrix {
            n_columns,
            indptr: Vec::with_capacity(rows.len() + 1),
            cols: Vec::new(),
            vals: Vec::new(),
            labels: labels.to_vec(),
        };
        m.indptr.push(0);
        for r in rows {
            for &(c, v) in r {
                if c as usize >= n_columns {
                    return Err(Error::param(format!("column {c} out of range {n_columns}")));
                }
                m.cols.push(c);
                m.vals.push(v);
            }
            m.indptr.push(m.cols.len());
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_columns(&self) -> usize {
        self.n_columns
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

/// Row number of each question event in log order (`u32::MAX` for lectures).
fn question_rows(log: &EventLog) -> Vec<u32> {
    let mut next = 0u32;
    log.events()
        .iter()
        .map(|e| {
            if e.is_question() {
                next += 1;
                next - 1
            } else {
                u32::MAX
            }
        })
        .collect()
}

const STUDENTS_PER_TASK: usize = 64;
const TASKS_PER_WAVE: usize = 256;

/// Feature rows for every question of `log` in log order. Students are
/// processed independently in parallel, each in chronological order.
///
/// `errordec_feed` supplies, per question row, the prediction used to
/// advance the errordec state after that row.
pub fn vectorize(
    log: &EventLog,
    featurizer: &Featurizer,
    catalog: &ColumnCatalog,
    errordec_feed: Option<&[f64]>,
) -> Result<DesignMatrix> {
    let width = featurizer.spec().len();
    if catalog.descriptor_count() != width {
        return Err(Error::Model("catalog was built for a different spec".into()));
    }
    let rows_of = question_rows(log);
    let n_rows = log.question_count();
    if let Some(feed) = errordec_feed {
        if feed.len() != n_rows {
            return Err(Error::param(format!("{} errordec predictions for {n_rows} rows", feed.len())));
        }
    }
    let events = log.events();
    let groups = log.student_groups();

    let mut cols = vec![0u32; n_rows * width];
    let mut vals = vec![0.0f64; n_rows * width];
    let mut labels = vec![false; n_rows];

    let tasks: Vec<&[(Id, Vec<usize>)]> = groups.chunks(STUDENTS_PER_TASK).collect();
    for wave in tasks.chunks(TASKS_PER_WAVE) {
        let produced: Vec<Result<Vec<(u32, SparseRow, bool)>>> = wave
            .par_iter()
            .map(|students| {
                let mut out = Vec::new();
                for (_, idxs) in students.iter() {
                    let mut h = StudentHistory::new();
                    for &i in idxs {
                        let e = &events[i];
                        let row = rows_of[i];
                        let mut feed = None;
                        if e.is_question() {
                            let mut r = Vec::with_capacity(width);
                            featurizer.featurize_into(&h, e, catalog, &mut r)?;
                            out.push((row, r, e.correct == Some(true)));
                            feed = errordec_feed.map(|f| f[row as usize]);
                        }
                        featurizer.apply_event(&mut h, e, feed)?;
                    }
                }
                Ok(out)
            })
            .collect();
        for chunk in produced {
            for (row, r, label) in chunk? {
                let at = row as usize * width;
                for (k, (c, v)) in r.into_iter().enumerate() {
                    cols[at + k] = c;
                    vals[at + k] = v;
                }
                labels[row as usize] = label;
            }
        }
    }
    Ok(DesignMatrix {
        n_columns: catalog.len(),
        indptr: (0..=n_rows).map(|r| r * width).collect(),
        cols,
        vals,
        labels,
    })
}

/// Sequential row producer over a log whose events are chronological within
/// each student. Memory grows with the number of students, not events.
pub struct RowStream<'a> {
    events: std::slice::Iter<'a, InteractionEvent>,
    featurizer: &'a Featurizer,
    catalog: &'a ColumnCatalog,
    histories: HashMap<Id, StudentHistory>,
    errordec_feed: Option<&'a [f64]>,
    row: usize,
}

impl<'a> RowStream<'a> {
    pub fn new(
        log: &'a EventLog,
        featurizer: &'a Featurizer,
        catalog: &'a ColumnCatalog,
        errordec_feed: Option<&'a [f64]>,
    ) -> Self {
        RowStream {
            events: log.events().iter(),
            featurizer,
            catalog,
            histories: HashMap::new(),
            errordec_feed,
            row: 0,
        }
    }
}

impl Iterator for RowStream<'_> {
    type Item = Result<(SparseRow, bool)>;

    fn next(&mut self) -> Option<Self::Item> {
        for e in self.events.by_ref() {
            let h = self.histories.entry(e.student_id.clone()).or_default();
            if !e.is_question() {
                if let Err(err) = self.featurizer.apply_event(h, e, None) {
                    return Some(Err(err));
                }
                continue;
            }
            let row = match self.featurizer.featurize(h, e, self.catalog) {
                Ok(r) => r,
                Err(err) => return Some(Err(err)),
            };
            let feed = self.errordec_feed.and_then(|f| f.get(self.row).copied());
            self.row += 1;
            if let Err(err) = self.featurizer.apply_event(h, e, feed) {
                return Some(Err(err));
            }
            return Some(Ok((row, e.correct == Some(true))));
        }
        None
    }
}
