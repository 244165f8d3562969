use rayon::prelude::*;

use super::lbfgs::{self, LbfgsConfig};
use super::{build_catalog, vectorize, ColumnCatalog, DesignMatrix, FitDiagnostics, FittedModel, OuterProbe};
use crate::error::{Error, Result};
use crate::event_log::EventLog;
use crate::features::{FeatureSpec, Featurizer};

/// Optimiser settings shared by the inner and outer fits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    /// Ridge weight on coefficients (the bias is never penalised).
    pub l2_penalty: f64,
    /// Gradient-norm target of the inner fit; also the minimum log-loss gain
    /// per outer cycle.
    pub tol: f64,
    pub max_iter: usize,
    /// Outer search cycles over the nonlinear parameters.
    pub outer_cycles: usize,
    /// Final bracket width of each golden-section search.
    pub param_tol: f64,
}

impl Default for TrainingRun {
    fn default() -> Self {
        TrainingRun {
            l2_penalty: 1e-6,
            tol: 1e-6,
            max_iter: 500,
            outer_cycles: 3,
            param_tol: 1e-3,
        }
    }
}

impl TrainingRun {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::param(format!("l2 penalty {} must be finite and >= 0", self.l2_penalty)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("tol {} must be > 0", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter must be at least 1"));
        }
        if !(self.param_tol > 0.0) {
            return Err(Error::param("param_tol must be > 0"));
        }
        Ok(())
    }
}

/// Result of one penalised logistic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub bias: f64,
    pub coefficients: Vec<f64>,
    /// Mean log-loss on the fitted rows, without the penalty.
    pub loss: f64,
    /// Penalised objective at the solution.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Penalised objective after every accepted step.
    pub history: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

const MAX_SHARDS: usize = 64;
const MIN_SHARD_ROWS: usize = 4096;

/// Contiguous row ranges; the count depends only on the row count so the
/// ordered reduction is reproducible under any thread count.
fn shards(n: usize) -> Vec<(usize, usize)> {
    let k = (n / MIN_SHARD_ROWS).clamp(1, MAX_SHARDS);
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect()
}

/// Columns are internally rescaled to unit root-mean-square so curvature is
/// comparable across columns; the objective is unchanged.
fn column_scales(x: &DesignMatrix) -> Vec<f64> {
    let mut sq = vec![0.0; x.n_columns()];
    for i in 0..x.rows() {
        let (cols, vals) = x.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            sq[c as usize] += v * v;
        }
    }
    let n = x.rows() as f64;
    sq.into_iter()
        .map(|s| if s > 0.0 { (n / s).sqrt() } else { 1.0 })
        .collect()
}

/// Penalised mean log-loss and its gradient in scaled coordinates;
/// `theta` holds the scaled coefficients followed by the bias.
fn objective(x: &DesignMatrix, scale: &[f64], l2: f64, theta: &[f64], grad: &mut [f64]) -> (f64, f64) {
    let p = scale.len();
    let bias = theta[p];
    let parts: Vec<(f64, Vec<f64>)> = shards(x.rows())
        .into_par_iter()
        .map(|(a, b)| {
            let mut g = vec![0.0; p + 1];
            let mut loss = 0.0;
            for i in a..b {
                let (cols, vals) = x.row(i);
                let mut z = bias;
                for (&c, &v) in cols.iter().zip(vals) {
                    let c = c as usize;
                    z += v * scale[c] * theta[c];
                }
                let y = if x.label(i) { 1.0 } else { 0.0 };
                loss += softplus(z) - y * z;
                let r = sigmoid(z) - y;
                g[p] += r;
                for (&c, &v) in cols.iter().zip(vals) {
                    let c = c as usize;
                    g[c] += r * v * scale[c];
                }
            }
            (loss, g)
        })
        .collect();
    grad.iter_mut().for_each(|v| *v = 0.0);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = x.rows() as f64;
    loss /= n;
    let mut penalty = 0.0;
    for g in grad[..=p].iter_mut() {
        *g /= n;
    }
    if l2 > 0.0 {
        for j in 0..p {
            let beta = scale[j] * theta[j];
            penalty += beta * beta;
            grad[j] += l2 * scale[j] * beta;
        }
    }
    (loss + 0.5 * l2 * penalty, loss)
}

/// Minimises mean log-loss + `l2/2 * |beta|^2` over the design rows.
/// `warm` seeds the coefficients (it must have the same width).
pub fn fit_linear(x: &DesignMatrix, run: &TrainingRun, warm: Option<&LinearFit>) -> Result<LinearFit> {
    run.validate()?;
    let n = x.rows();
    let positives = x.labels().iter().filter(|&&y| y).count();
    if n == 0 || positives == 0 || positives == n {
        return Err(Error::DegenerateLabels);
    }
    let p = x.n_columns();
    let scale = column_scales(x);
    let mut theta = vec![0.0; p + 1];
    match warm {
        Some(w) if w.coefficients.len() == p => {
            for j in 0..p {
                theta[j] = w.coefficients[j] / scale[j];
            }
            theta[p] = w.bias;
        }
        _ => {
            let rate = positives as f64 / n as f64;
            theta[p] = (rate / (1.0 - rate)).ln();
        }
    }
    let cfg = LbfgsConfig {
        memory: 10,
        max_iter: run.max_iter,
        grad_tol: run.tol,
    };
    let l2 = run.l2_penalty;
    let result = lbfgs::minimize(
        theta,
        cfg,
        |t, g| objective(x, &scale, l2, t, g).0,
        |g| {
            // Convergence is judged on the gradient in the original coordinates.
            let mut m = g[p].abs();
            for j in 0..p {
                m = m.max((g[j] / scale[j]).abs());
            }
            m
        },
    );
    if !result.converged {
        log::warn!(
            "logistic fit stopped after {} iterations with |grad| = {:e} (tol {:e})",
            result.iterations,
            result.grad_norm,
            run.tol
        );
    }
    let mut g = vec![0.0; p + 1];
    let (obj, loss) = objective(x, &scale, l2, &result.x, &mut g);
    if !obj.is_finite() {
        return Err(Error::Model("logistic fit diverged".into()));
    }
    Ok(LinearFit {
        bias: result.x[p],
        coefficients: (0..p).map(|j| scale[j] * result.x[j]).collect(),
        loss,
        objective: obj,
        iterations: result.iterations,
        converged: result.converged,
        grad_norm: result.grad_norm,
        history: result.history,
    })
}

/// Probabilities for every design row (clamped like served predictions).
pub fn design_predictions(x: &DesignMatrix, bias: f64, coefficients: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let (cols, vals) = x.row(i);
            let z = bias
                + cols
                    .iter()
                    .zip(vals)
                    .map(|(&c, &v)| coefficients[c as usize] * v)
                    .sum::<f64>();
            super::clamp_probability(sigmoid(z))
        })
        .collect()
}

/// Catalogs and cached pass-one results for repeated fits of one spec shape.
struct Problem<'a> {
    train: &'a EventLog,
    base: Featurizer,
    catalog: ColumnCatalog,
    /// Spec-without-errordec featurizer and catalog for the first pass.
    pass_one: Option<Option<(Featurizer, ColumnCatalog)>>,
    run: &'a TrainingRun,
    pass_one_cache: Option<(Vec<u64>, Vec<f64>, Option<LinearFit>)>,
}

fn param_key(spec: &FeatureSpec) -> Vec<u64> {
    spec.descriptors()
        .iter()
        .map(|d| d.param.map_or(u64::MAX, f64::to_bits))
        .collect()
}

impl<'a> Problem<'a> {
    fn new(train: &'a EventLog, featurizer: &Featurizer, run: &'a TrainingRun) -> Result<Self> {
        run.validate()?;
        let catalog = build_catalog(train, featurizer)?;
        let pass_one = if featurizer.spec().errordec_index().is_some() {
            Some(match featurizer.spec().without_errordec() {
                Some(spec) => {
                    let f = featurizer.with_spec(spec)?;
                    let c = build_catalog(train, &f)?;
                    Some((f, c))
                }
                None => None,
            })
        } else {
            None
        };
        Ok(Problem {
            train,
            base: featurizer.clone(),
            catalog,
            pass_one,
            run,
            pass_one_cache: None,
        })
    }

    /// Pass-one in-sample predictions that feed errordec during training.
    fn errordec_feed(&mut self, spec: &FeatureSpec) -> Result<Option<Vec<f64>>> {
        let Some(pass_one) = &self.pass_one else { return Ok(None) };
        let Some((f1, c1)) = pass_one else {
            // Nothing but errordec: the first pass is the base rate.
            let n = self.train.question_count();
            let pos = self.train.events().iter().filter(|e| e.correct == Some(true)).count();
            return Ok(Some(vec![super::clamp_probability(pos as f64 / n.max(1) as f64); n]));
        };
        let reduced = spec.without_errordec().expect("pass one exists");
        let key = param_key(&reduced);
        if let Some((k, preds, _)) = &self.pass_one_cache {
            if *k == key {
                return Ok(Some(preds.clone()));
            }
        }
        let f = f1.with_spec(reduced)?;
        let x = vectorize(self.train, &f, c1, None)?;
        let warm = self.pass_one_cache.as_ref().and_then(|c| c.2.clone());
        let fit = fit_linear(&x, self.run, warm.as_ref())?;
        let preds = design_predictions(&x, fit.bias, &fit.coefficients);
        self.pass_one_cache = Some((key, preds.clone(), Some(fit)));
        Ok(Some(preds))
    }

    fn fit(&mut self, spec: &FeatureSpec, warm: Option<&LinearFit>) -> Result<(Featurizer, LinearFit)> {
        let feed = self.errordec_feed(spec)?;
        let f = self.base.with_spec(spec.clone())?;
        let x = vectorize(self.train, &f, &self.catalog, feed.as_deref())?;
        let fit = fit_linear(&x, self.run, warm)?;
        Ok((f, fit))
    }

    fn finish(self, featurizer: Featurizer, fit: LinearFit, outer_trace: Vec<OuterProbe>) -> Result<FittedModel> {
        let diagnostics = FitDiagnostics {
            final_loss: fit.loss,
            iterations: fit.iterations,
            converged: fit.converged,
            grad_norm: fit.grad_norm,
            loss_history: fit.history,
            outer_trace,
        };
        let mut model = FittedModel::new(featurizer, self.catalog, fit.bias, fit.coefficients)?;
        model.diagnostics = diagnostics;
        Ok(model)
    }
}

/// Fits coefficients with the spec's nonlinear parameters held fixed.
/// Specs with errordec use the two-pass protocol: a fit without errordec
/// supplies the predictions that drive the errordec state.
pub fn fit_model(train: &EventLog, featurizer: &Featurizer, run: &TrainingRun) -> Result<FittedModel> {
    let mut problem = Problem::new(train, featurizer, run)?;
    let (f, fit) = problem.fit(featurizer.spec(), None)?;
    problem.finish(f, fit, Vec::new())
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Coordinate-wise golden-section search over every nonlinear parameter,
/// refitting the coefficients at each probe, for up to `outer_cycles`
/// cycles. Returns the best model found.
pub fn fit_nonlinear(train: &EventLog, featurizer: &Featurizer, run: &TrainingRun) -> Result<FittedModel> {
    let targets = featurizer.spec().nonlinear_indices();
    if targets.is_empty() {
        return Err(Error::param("spec has no nonlinear parameter to search"));
    }
    if run.outer_cycles < 1 {
        return Err(Error::param("outer search budget must be at least one cycle"));
    }
    let mut problem = Problem::new(train, featurizer, run)?;
    let mut trace = Vec::new();

    let mut spec = featurizer.spec().clone();
    let (mut best_f, mut best_fit) = problem.fit(&spec, None)?;
    trace.push(OuterProbe {
        cycle: 0,
        descriptor: targets[0],
        value: spec.descriptors()[targets[0]].param.expect("nonlinear"),
        loss: best_fit.loss,
    });

    for cycle in 1..=run.outer_cycles {
        let start_loss = best_fit.loss;
        for &t in &targets {
            let (lo, hi) = spec.descriptors()[t].kind.param_bounds().expect("nonlinear");
            let mut probe = |v: f64, best_f: &mut Featurizer, best_fit: &mut LinearFit| -> Result<f64> {
                let mut s = best_f.spec().clone();
                s.set_param(t, v)?;
                let (f, fit) = problem.fit(&s, Some(best_fit))?;
                let loss = fit.loss;
                trace.push(OuterProbe {
                    cycle,
                    descriptor: t,
                    value: v,
                    loss,
                });
                if loss < best_fit.loss {
                    *best_f = f;
                    *best_fit = fit;
                }
                Ok(loss)
            };
            let (mut a, mut b) = (lo, hi);
            let mut c = b - INV_PHI * (b - a);
            let mut d = a + INV_PHI * (b - a);
            let mut fc = probe(c, &mut best_f, &mut best_fit)?;
            let mut fd = probe(d, &mut best_f, &mut best_fit)?;
            while b - a > run.param_tol {
                if fc <= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - INV_PHI * (b - a);
                    fc = probe(c, &mut best_f, &mut best_fit)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + INV_PHI * (b - a);
                    fd = probe(d, &mut best_f, &mut best_fit)?;
                }
            }
            spec = best_f.spec().clone();
            log::info!(
                "cycle {cycle}: {} {} = {:.4} (log-loss {:.6})",
                spec.descriptors()[t].label(),
                spec.descriptors()[t].kind.param_name().unwrap_or("?"),
                spec.descriptors()[t].param.unwrap_or(f64::NAN),
                best_fit.loss
            );
        }
        if start_loss - best_fit.loss < run.tol {
            break;
        }
    }
    problem.finish(best_f, best_fit, trace)
}
