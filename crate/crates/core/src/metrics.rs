//! Prediction quality: AUC, log-loss, calibration and decision agreement.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

fn check_inputs(predictions: &[f64], labels: &[bool]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::param(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(p) = predictions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::param(format!("prediction {p} outside [0, 1]")));
    }
    Ok(())
}

/// Area under the ROC curve via the rank-sum statistic, ties credited 0.5.
pub fn auc(predictions: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(predictions, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    // Sum of 1-based average ranks of positives, kept doubled to stay integral.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && predictions[order[j + 1]] == predictions[order[i]] {
            j += 1;
        }
        let doubled_avg = (i + 1 + j + 1) as u128;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled_rank_sum += doubled_avg * positives;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / 2.0 / (p * q) as f64)
}

/// Mean negative log-likelihood of the labels.
pub fn log_loss(predictions: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(predictions, labels)?;
    if predictions.is_empty() {
        return Err(Error::UndefinedMetric("log-loss of no predictions".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    Ok(total / predictions.len() as f64)
}

pub const CALIBRATION_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    /// Zero for empty bins.
    pub mean_prediction: f64,
    pub empirical_rate: f64,
    pub count: usize,
}

/// Equal-width reliability bins over [0, 1]; the top bin is closed.
pub fn calibration(predictions: &[f64], labels: &[bool], bins: usize) -> Result<Vec<CalibrationBin>> {
    check_inputs(predictions, labels)?;
    if bins == 0 {
        return Err(Error::param("need at least one calibration bin"));
    }
    let mut sum_p = vec![0.0; bins];
    let mut sum_y = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&p, &y) in predictions.iter().zip(labels) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        sum_p[b] += p;
        sum_y[b] += y as usize;
        count[b] += 1;
    }
    Ok((0..bins)
        .map(|b| {
            let c = count[b];
            CalibrationBin {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                mean_prediction: if c > 0 { sum_p[b] / c as f64 } else { 0.0 },
                empirical_rate: if c > 0 { sum_y[b] as f64 / c as f64 } else { 0.0 },
                count: c,
            }
        })
        .collect())
}

/// Fraction of positions where both prediction sets fall on the same side
/// of `threshold` (strictly above vs not).
pub fn threshold_agreement(a: &[f64], b: &[f64], threshold: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::param(format!("{} vs {} predictions", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::UndefinedMetric("agreement over no predictions".into()));
    }
    let same = a
        .iter()
        .zip(b)
        .filter(|(&x, &y)| (x > threshold) == (y > threshold))
        .count();
    Ok(same as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub auc: f64,
    pub log_loss: f64,
    pub calibration: Vec<CalibrationBin>,
}

impl EvalReport {
    pub fn compute(predictions: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(EvalReport {
            n: predictions.len(),
            auc: auc(predictions, labels)?,
            log_loss: log_loss(predictions, labels)?,
            calibration: calibration(predictions, labels, CALIBRATION_BINS)?,
        })
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n\t{}", self.n)?;
        writeln!(out, "auc\t{:.6}", self.auc)?;
        writeln!(out, "log_loss\t{:.6}", self.log_loss)?;
        writeln!(out, "bin\tcount\tmean_prediction\tempirical_rate")?;
        for b in &self.calibration {
            writeln!(
                out,
                "[{:.2},{:.2})\t{}\t{:.4}\t{:.4}",
                b.lo, b.hi, b.count, b.mean_prediction, b.empirical_rate
            )?;
        }
        Ok(())
    }

    /// One summary record followed by one record per calibration bin.
    pub fn write_json_lines<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Summary {
            record: &'static str,
            n: usize,
            auc: f64,
            log_loss: f64,
        }
        #[derive(Serialize)]
        struct Bin<'a> {
            record: &'static str,
            #[serde(flatten)]
            bin: &'a CalibrationBin,
        }
        serde_json::to_writer(
            &mut out,
            &Summary {
                record: "summary",
                n: self.n,
                auc: self.auc,
                log_loss: self.log_loss,
            },
        )?;
        writeln!(out)?;
        for b in &self.calibration {
            serde_json::to_writer(&mut out, &Bin { record: "calibration", bin: b })?;
            writeln!(out)?;
        }
        Ok(())
    }
}
