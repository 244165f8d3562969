//! Knowledge components from performance covariance among tag combinations.
//!
//! Each combo is described by its row of the student-level covariance
//! matrix; fuzzy c-means over those rows yields soft memberships, and the
//! argmax membership is the combo's crisp cluster.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_log::{EventLog, Id};
use crate::features::{canonical_combo, TagCombo};

/// Pairwise covariance of per-student mean correctness between combos.
#[derive(Debug, Clone, PartialEq)]
pub struct ComboPerformanceMatrix {
    pub combos: Vec<TagCombo>,
    /// Row-major `combos.len()²` covariances.
    pub matrix: Vec<f64>,
    /// Students contributing to each pair.
    pub support: Vec<u32>,
}

impl ComboPerformanceMatrix {
    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.matrix[a * self.combos.len() + b]
    }

    pub fn support(&self, a: usize, b: usize) -> u32 {
        self.support[a * self.combos.len() + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let n = self.combos.len();
        &self.matrix[a * n..(a + 1) * n]
    }

    /// Builds a matrix from explicit values (symmetric, full support).
    pub fn from_dense(combos: Vec<TagCombo>, matrix: Vec<f64>) -> Result<Self> {
        let n = combos.len();
        if matrix.len() != n * n {
            return Err(Error::param(format!("matrix has {} entries, expected {}", matrix.len(), n * n)));
        }
        for a in 0..n {
            for b in 0..a {
                if matrix[a * n + b] != matrix[b * n + a] {
                    return Err(Error::param(format!("matrix is not symmetric at ({a},{b})")));
                }
            }
        }
        Ok(ComboPerformanceMatrix {
            combos,
            matrix,
            support: vec![u32::MAX; n * n],
        })
    }
}

/// Students with at least this many attempts on a combo contribute a mean.
const MIN_ATTEMPTS: u32 = 2;

/// Student-level covariance between combos. A combo is retained when at
/// least `min_students` students (and never fewer than 2) attempted it at
/// least twice; pairs with less support are zeroed.
pub fn combo_covariance(log: &EventLog, min_students: usize) -> Result<ComboPerformanceMatrix> {
    let min_students = min_students.max(2);
    let mut per_student: HashMap<Id, HashMap<TagCombo, (u32, u32)>> = HashMap::new();
    for e in log.events().iter().filter(|e| e.is_question()) {
        let slot = per_student
            .entry(e.student_id.clone())
            .or_default()
            .entry(canonical_combo(e))
            .or_insert((0, 0));
        slot.0 += 1;
        if e.correct == Some(true) {
            slot.1 += 1;
        }
    }

    let mut students: Vec<_> = per_student.iter().collect();
    students.sort_by(|a, b| a.0.cmp(b.0));

    let mut eligible_count: HashMap<&TagCombo, usize> = HashMap::new();
    for (_, combos) in &students {
        for (c, &(n, _)) in combos.iter() {
            if n >= MIN_ATTEMPTS {
                *eligible_count.entry(c).or_default() += 1;
            }
        }
    }
    let mut combos: Vec<TagCombo> = eligible_count
        .into_iter()
        .filter(|&(_, n)| n >= min_students)
        .map(|(c, _)| c.clone())
        .collect();
    combos.sort();
    if combos.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} combos have {min_students}+ students with {MIN_ATTEMPTS}+ attempts; need at least 2",
            combos.len()
        )));
    }
    let index: HashMap<&TagCombo, usize> = combos.iter().enumerate().map(|(i, c)| (c, i)).collect();

    // Per student: (combo index, mean correctness), sorted by index.
    let profiles: Vec<Vec<(usize, f64)>> = students
        .iter()
        .map(|(_, cs)| {
            let mut v: Vec<(usize, f64)> = cs
                .iter()
                .filter(|(_, &(n, _))| n >= MIN_ATTEMPTS)
                .filter_map(|(c, &(n, s))| index.get(c).map(|&i| (i, s as f64 / n as f64)))
                .collect();
            v.sort_by_key(|p| p.0);
            v
        })
        .collect();
    let n = combos.len();
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, p) in profiles.iter().enumerate() {
        for &(i, _) in p {
            holders[i].push(s);
        }
    }

    // Upper triangle row by row; each row sums its students in id order.
    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut cnt = vec![0u32; n];
            let mut sx = vec![0.0; n];
            let mut sy = vec![0.0; n];
            let mut sxy = vec![0.0; n];
            for &s in &holders[a] {
                let p = &profiles[s];
                let xa = p.iter().find(|q| q.0 == a).expect("holder").1;
                for &(b, yb) in p.iter().filter(|q| q.0 >= a) {
                    cnt[b] += 1;
                    sx[b] += xa;
                    sy[b] += yb;
                    sxy[b] += xa * yb;
                }
            }
            let cov = (0..n)
                .map(|b| {
                    let k = cnt[b] as usize;
                    if b < a || k < min_students {
                        0.0
                    } else {
                        let kf = k as f64;
                        let c = (sxy[b] - sx[b] * sy[b] / kf) / (kf - 1.0);
                        // Rounding can leave a variance a hair below zero.
                        if b == a {
                            c.max(0.0)
                        } else {
                            c
                        }
                    }
                })
                .collect();
            (cov, cnt)
        })
        .collect();

    let mut matrix = vec![0.0; n * n];
    let mut support = vec![0u32; n * n];
    for (a, (cov, cnt)) in rows.into_iter().enumerate() {
        for b in a..n {
            matrix[a * n + b] = cov[b];
            matrix[b * n + a] = cov[b];
            support[a * n + b] = cnt[b];
            support[b * n + a] = cnt[b];
        }
    }
    Ok(ComboPerformanceMatrix {
        combos,
        matrix,
        support,
    })
}

/// Soft assignment of combos to `k` knowledge components.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    k: usize,
    combos: Vec<TagCombo>,
    index: HashMap<TagCombo, usize>,
    /// Row-major `combos × k`.
    membership: Vec<f64>,
    crisp: Vec<u32>,
    /// Objective after initialisation and after every iteration.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyParams {
    pub k: usize,
    pub fuzzifier: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl FuzzyParams {
    pub fn new(k: usize, seed: u64) -> Self {
        FuzzyParams {
            k,
            fuzzifier: 2.0,
            seed,
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Memberships minimising the objective for fixed centers.
fn update_memberships(points: &[&[f64]], centers: &[Vec<f64>], m: f64) -> Vec<f64> {
    let k = centers.len();
    let expo = 1.0 / (m - 1.0);
    points
        .par_iter()
        .flat_map_iter(|x| {
            let d: Vec<f64> = centers.iter().map(|c| sq_dist(x, c)).collect();
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let row: Vec<f64> = if dmin == 0.0 {
                let hits = d.iter().filter(|&&v| v == 0.0).count() as f64;
                d.iter().map(|&v| if v == 0.0 { 1.0 / hits } else { 0.0 }).collect()
            } else {
                let r: Vec<f64> = d.iter().map(|&v| (dmin / v).powf(expo)).collect();
                let total: f64 = r.iter().sum();
                r.iter().map(|v| v / total).collect()
            };
            debug_assert_eq!(row.len(), k);
            row
        })
        .collect()
}

fn update_centers(points: &[&[f64]], u: &[f64], k: usize, m: f64) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    (0..k)
        .into_par_iter()
        .map(|j| {
            let mut c = vec![0.0; dim];
            let mut w_total = 0.0;
            for (i, x) in points.iter().enumerate() {
                let w = u[i * k + j].powf(m);
                if w == 0.0 {
                    continue;
                }
                w_total += w;
                for (cv, xv) in c.iter_mut().zip(x.iter()) {
                    *cv += w * xv;
                }
            }
            if w_total > 0.0 {
                for cv in &mut c {
                    *cv /= w_total;
                }
            }
            c
        })
        .collect()
}

fn objective(points: &[&[f64]], centers: &[Vec<f64>], u: &[f64], m: f64) -> f64 {
    let k = centers.len();
    points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            centers
                .iter()
                .enumerate()
                .map(|(j, c)| u[i * k + j].powf(m) * sq_dist(x, c))
                .sum::<f64>()
        })
        .sum()
}

/// Seeded k-means++ choice of initial centers among the points.
fn init_centers(points: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if chosen.contains(&pick) {
                (0..n).find(|i| !chosen.contains(i)).expect("k < n")
            } else {
                pick
            }
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k < n")
        };
        chosen.push(next);
        for (i, x) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

/// Fuzzy c-means over the covariance rows.
pub fn fuzzy_cluster(matrix: &ComboPerformanceMatrix, params: FuzzyParams) -> Result<ClusterModel> {
    let FuzzyParams {
        k,
        fuzzifier: m,
        seed,
        max_iter,
        tol,
    } = params;
    let n = matrix.len();
    if k < 2 {
        return Err(Error::param("k must be at least 2"));
    }
    if k >= n {
        return Err(Error::param(format!("k = {k} must be below the combo count {n}")));
    }
    if !(m > 1.0 && m.is_finite()) {
        return Err(Error::param(format!("fuzzifier must exceed 1, got {m}")));
    }
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::param("need max_iter >= 1 and tol > 0"));
    }

    let points: Vec<&[f64]> = (0..n).map(|i| matrix.row(i)).collect();
    let mut centers = init_centers(&points, k, seed);
    let mut u = update_memberships(&points, &centers, m);
    let mut history = vec![objective(&points, &centers, &u, m)];
    let mut converged = false;
    for _ in 0..max_iter {
        centers = update_centers(&points, &u, k, m);
        let next = update_memberships(&points, &centers, m);
        let delta = next
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        let j = objective(&points, &centers, &u, m);
        let prev = *history.last().expect("nonempty");
        debug_assert!(j <= prev + 1e-12 * prev.abs().max(1.0), "objective rose {prev} -> {j}");
        history.push(j);
        if delta < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fuzzy c-means stopped at max_iter = {max_iter} before membership change < {tol}");
    }
    Ok(ClusterModel::from_membership(matrix.combos.clone(), k, u, history, converged))
}

impl ClusterModel {
    fn from_membership(
        combos: Vec<TagCombo>,
        k: usize,
        membership: Vec<f64>,
        objective_history: Vec<f64>,
        converged: bool,
    ) -> Self {
        let crisp = membership.chunks(k).map(argmax).collect();
        let index = combos.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        ClusterModel {
            k,
            combos,
            index,
            membership,
            crisp,
            objective_history,
            converged,
        }
    }

    /// Model with explicit memberships (rows must be valid distributions).
    pub fn from_rows(combos: Vec<TagCombo>, k: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if k < 2 {
            return Err(Error::param("k must be at least 2"));
        }
        if rows.len() != combos.len() {
            return Err(Error::param("one membership row per combo is required"));
        }
        let mut flat = Vec::with_capacity(rows.len() * k);
        for r in &rows {
            let total: f64 = r.iter().sum();
            if r.len() != k || r.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::param("membership rows must be k non-negative values summing to 1"));
            }
            flat.extend_from_slice(r);
        }
        Ok(Self::from_membership(combos, k, flat, Vec::new(), true))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn combos(&self) -> &[TagCombo] {
        &self.combos
    }

    pub fn membership_row(&self, i: usize) -> &[f64] {
        &self.membership[i * self.k..(i + 1) * self.k]
    }

    pub fn crisp(&self) -> &[u32] {
        &self.crisp
    }

    /// Cluster reported for combos the model has never seen: the argmax of a
    /// uniform row under lowest-index tie breaking.
    pub fn fallback_cluster(&self) -> u32 {
        0
    }

    /// Membership row and crisp cluster; unseen combos get a uniform row.
    pub fn assign(&self, combo: &TagCombo) -> (Vec<f64>, u32) {
        match self.index.get(combo) {
            Some(&i) => (self.membership_row(i).to_vec(), self.crisp[i]),
            None => (vec![1.0 / self.k as f64; self.k], self.fallback_cluster()),
        }
    }

    pub fn crisp_of(&self, combo: &TagCombo) -> u32 {
        self.index
            .get(combo)
            .map_or(self.fallback_cluster(), |&i| self.crisp[i])
    }

    /// Tab-separated table: part, tags, k memberships, crisp id.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "part\ttags")?;
        for j in 0..self.k {
            write!(out, "\tm{j}")?;
        }
        writeln!(out, "\tcrisp")?;
        for (i, c) in self.combos.iter().enumerate() {
            let tags: Vec<String> = c.tags.iter().map(|t| t.to_string()).collect();
            write!(out, "{}\t{}", c.part, tags.join(" "))?;
            for v in self.membership_row(i) {
                write!(out, "\t{v:?}")?;
            }
            writeln!(out, "\t{}", self.crisp[i])?;
        }
        Ok(())
    }

    pub fn read_table<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty cluster table".into()))??;
        let k = header.split('\t').count().saturating_sub(3);
        let mut combos = Vec::new();
        let mut rows = Vec::new();
        let mut crisp = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("cluster table line {}: malformed", n + 2));
            if fields.len() != k + 3 {
                return Err(bad());
            }
            let part: u8 = fields[0].parse().map_err(|_| bad())?;
            let tags = fields[1]
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            combos.push(TagCombo::new(part, &tags));
            rows.push(
                fields[2..2 + k]
                    .iter()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad())?,
            );
            crisp.push(fields[k + 2].parse::<u32>().map_err(|_| bad())?);
        }
        let model = Self::from_rows(combos, k, rows)?;
        if model.crisp != crisp {
            return Err(Error::Format("crisp column disagrees with memberships".into()));
        }
        Ok(model)
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::InteractionEvent;

    fn combos(n: usize) -> Vec<TagCombo> {
        (0..n).map(|i| TagCombo::new(1, &[i as u32])).collect()
    }

    #[test]
    fn identical_patterns_covary_by_their_variance() {
        // Two combos answered identically by every student.
        let mut events = Vec::new();
        let patterns = [[true, true], [true, false], [false, false], [true, false], [false, true]];
        for (s, pat) in patterns.iter().enumerate() {
            let mut t = 0;
            for tag in [1u32, 2] {
                for &c in pat {
                    events.push(InteractionEvent::question(&format!("s{s}"), "q", 1, &[tag], t, c));
                    t += 1;
                }
            }
        }
        let m = combo_covariance(&EventLog::from_events(events).unwrap(), 2).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.get(0, 1) > 0.0);
        assert_eq!(m.get(0, 1), m.get(0, 0));
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert_eq!(m.support(0, 1), 5);
    }

    #[test]
    fn too_few_combos_is_an_error() {
        let events = vec![
            InteractionEvent::question("a", "q", 1, &[1], 0, true),
            InteractionEvent::question("a", "q", 1, &[1], 1, false),
        ];
        assert!(matches!(
            combo_covariance(&EventLog::from_events(events).unwrap(), 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn k_bounds() {
        let m = ComboPerformanceMatrix::from_dense(combos(3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(fuzzy_cluster(&m, FuzzyParams::new(3, 1)).is_err());
        assert!(fuzzy_cluster(&m, FuzzyParams::new(1, 1)).is_err());
        let mut p = FuzzyParams::new(2, 1);
        p.fuzzifier = 1.0;
        assert!(fuzzy_cluster(&m, p).is_err());
        let model = fuzzy_cluster(&m, FuzzyParams::new(2, 1)).unwrap();
        for i in 0..3 {
            let s: f64 = model.membership_row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_combo_gets_uniform_row() {
        let model = ClusterModel::from_rows(combos(2), 4, vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.7, 0.1, 0.1, 0.1]]).unwrap();
        let (row, crisp) = model.assign(&TagCombo::new(5, &[99]));
        assert_eq!(row, vec![0.25; 4]);
        assert_eq!(crisp, 0);
        let (row, crisp) = model.assign(&TagCombo::new(1, &[0]));
        assert_eq!(row, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(crisp, 3);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn table_round_trip() {
        let model = ClusterModel::from_rows(combos(2), 2, vec![vec![0.3, 0.7], vec![1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        let mut buf = Vec::new();
        model.write_table(&mut buf).unwrap();
        let back = ClusterModel::read_table(buf.as_slice()).unwrap();
        assert_eq!(back.membership, model.membership);
        assert_eq!(back.crisp, model.crisp);
    }
}
