//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Only steps that decrease the objective are accepted, so the value
//! sequence seen by the iteration callback is non-increasing.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Length of the very first step relative to `rms(x0) / max|g|`.
    pub initial_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 20,
            max_iters: 50,
            max_backtracks: 40,
            c1: 1e-4,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Callback,
    MaxIters,
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient at a point.
/// `on_iter(iteration, x, value)` is called at the start and after every
/// accepted step; returning `true` stops the search.
pub fn minimize<F, C>(x0: Vec<f64>, cfg: &LbfgsConfig, mut f: F, mut on_iter: C) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    C: FnMut(usize, &[f64], f64) -> bool,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let scale = (dot(&x, &x) / n.max(1) as f64).sqrt().max(1e-12);
    let done = |reason, x, value, iterations, evaluations| LbfgsResult {
        x,
        value,
        iterations,
        evaluations,
        reason,
    };
    if on_iter(0, &x, fx) {
        return done(StopReason::Callback, x, fx, 0, evaluations);
    }
    for iter in 1..=cfg.max_iters {
        let mut accepted = None;
        for attempt in 0..2 {
            let d = if hist.is_empty() {
                g.iter().map(|v| -v).collect::<Vec<_>>()
            } else {
                direction(&g, &hist)
            };
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                hist.clear();
                if attempt == 0 {
                    continue;
                }
                break;
            }
            let mut t = if hist.is_empty() {
                let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                cfg.initial_step * scale / dmax.max(f64::MIN_POSITIVE)
            } else {
                1.0
            };
            for _ in 0..cfg.max_backtracks {
                let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let (fn_, gn) = f(&xn);
                evaluations += 1;
                if fn_.is_finite() && fn_ <= fx + cfg.c1 * t * slope && fn_ < fx {
                    accepted = Some((xn, fn_, gn, t, d.clone()));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            if hist.is_empty() {
                break;
            }
            hist.clear();
        }
        let Some((xn, fn_, gn, t, d)) = accepted else {
            return done(StopReason::LineSearch, x, fx, iter - 1, evaluations);
        };
        let s: Vec<f64> = d.iter().map(|v| t * v).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
        if on_iter(iter, &x, fx) {
            return done(StopReason::Callback, x, fx, iter, evaluations);
        }
    }
    done(StopReason::MaxIters, x, fx, cfg.max_iters, evaluations)
}

fn direction(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alpha = vec![0.0; hist.len()];
    for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alpha[i] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    let (s, y, _) = hist.back().expect("non-empty history");
    let gamma = dot(s, y) / dot(y, y);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for (i, (s, y, rho)) in hist.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha[i] - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (v, g)
        };
        let cfg = LbfgsConfig {
            max_iters: 500,
            initial_step: 0.01,
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        let r = minimize(vec![-1.2, 1.0], &cfg, f, |_, _, v| {
            assert!(v <= last);
            last = v;
            v < 1e-14
        });
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r);
    }

    #[test]
    fn quadratic_converges_fast() {
        let diag: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let f = |x: &[f64]| {
            let v = x.iter().zip(&diag).map(|(a, d)| 0.5 * d * a * a).sum();
            (v, x.iter().zip(&diag).map(|(a, d)| d * a).collect())
        };
        let r = minimize(vec![1.0; 50], &LbfgsConfig { max_iters: 200, ..Default::default() }, f, |_, _, v| v < 1e-20);
        assert_eq!(r.reason, StopReason::Callback);
        assert!(r.iterations < 100);
    }
}
