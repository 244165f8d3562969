//! Limited-memory BFGS with backtracking Armijo line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once `grad_norm(g) < grad_tol`.
    pub grad_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LbfgsResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimises `f`, which writes the gradient into its second argument and
/// returns the objective. `grad_norm` decides convergence.
pub(crate) fn minimize(
    x0: Vec<f64>,
    cfg: LbfgsConfig,
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    grad_norm: impl Fn(&[f64]) -> f64,
) -> LbfgsResult {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut gn = grad_norm(&g);
    let mut iterations = 0;

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    while gn >= cfg.grad_tol && iterations < cfg.max_iter {
        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        let first_step = if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for di in &mut d {
                *di *= gamma;
            }
            1.0
        } else {
            1.0 / dot(&g, &g).sqrt().max(1e-300)
        };
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        let mut step = first_step;
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            step = 1.0 / (-slope).sqrt().max(1e-300);
        }

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * slope {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            log::debug!("line search failed after {iterations} iterations (|g| = {gn:e})");
            break;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        let improvement = fx - f_new;
        fx = f_new;
        history.push(fx);
        gn = grad_norm(&g);
        if improvement <= f64::EPSILON * fx.abs() && pairs.is_empty() {
            break;
        }
    }
    LbfgsResult {
        x,
        iterations,
        converged: gn < cfg.grad_tol,
        grad_norm: gn,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inf_norm(g: &[f64]) -> f64 {
        g.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn minimises_rosenbrock() {
        let cfg = LbfgsConfig {
            memory: 10,
            max_iter: 2000,
            grad_tol: 1e-8,
        };
        let r = minimize(
            vec![-1.2, 1.0],
            cfg,
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            inf_norm,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_in_few_steps() {
        let cfg = LbfgsConfig {
            memory: 5,
            max_iter: 100,
            grad_tol: 1e-10,
        };
        let diag = [1.0, 10.0, 100.0];
        let r = minimize(
            vec![1.0, 1.0, 1.0],
            cfg,
            |x, g| {
                let mut f = 0.0;
                for i in 0..3 {
                    g[i] = diag[i] * (x[i] - i as f64);
                    f += 0.5 * diag[i] * (x[i] - i as f64).powi(2);
                }
                f
            },
            inf_norm,
        );
        assert!(r.converged, "{r:?}");
        assert!(r.iterations < 30);
    }
}
