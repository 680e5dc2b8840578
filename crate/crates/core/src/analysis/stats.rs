//! Moment, covariance and autocovariance estimators with their gradients.
//!
//! All estimators are population (divide-by-N) estimators. Gradients are
//! accumulated into caller-provided buffers.

use crate::grid::RealGrid;

/// Central moments of a sample.
#[derive(Debug, Clone, Copy)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub m3: f64,
    pub m4: f64,
}

impl Moments {
    pub fn of(v: &[f64]) -> Moments {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in v {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        Moments {
            mean,
            var: m2 / n,
            m3: m3 / n,
            m4: m4 / n,
        }
    }

    pub fn skewness(&self) -> f64 {
        if self.var <= 0.0 {
            0.0
        } else {
            self.m3 / self.var.powf(1.5)
        }
    }

    /// Unnormalized kurtosis `m4 / m2^2` (3 for a Gaussian).
    pub fn kurtosis(&self) -> f64 {
        if self.var <= 0.0 {
            3.0
        } else {
            self.m4 / (self.var * self.var)
        }
    }

    /// Accumulates `g_mean dmean + g_var dvar + g_skew dskew + g_kurt dkurt`
    /// with respect to the sample into `out`.
    pub fn backprop(
        &self,
        v: &[f64],
        g_mean: f64,
        g_var: f64,
        g_skew: f64,
        g_kurt: f64,
        out: &mut [f64],
    ) {
        if self.var <= 0.0 {
            return;
        }
        let n = v.len() as f64;
        let var = self.var;
        // d skew = d m3 / var^1.5 - 1.5 m3 / var^2.5 d var
        // d kurt = d m4 / var^2   - 2 m4 / var^3   d var
        let c3 = g_skew / var.powf(1.5);
        let c4 = g_kurt / (var * var);
        let cvar = g_var - 1.5 * g_skew * self.m3 / var.powf(2.5)
            - 2.0 * g_kurt * self.m4 / (var * var * var);
        for (o, &x) in out.iter_mut().zip(v) {
            let d = x - self.mean;
            let d2 = d * d;
            *o += g_mean / n
                + cvar * 2.0 * d / n
                + c3 * 3.0 * (d2 - var) / n
                + c4 * 4.0 * (d2 * d - self.m3) / n;
        }
    }
}

/// Subtracts the mean.
pub fn centered(g: &RealGrid) -> RealGrid {
    let m = g.mean();
    g.map(|v| v - m)
}

/// Circular autocovariance `(1/n) sum_i d(i) d(i + lag)` of a centred grid at
/// each lag `(dx, dy)`.
pub fn autocov(d: &RealGrid, lags: &[(isize, isize)]) -> Vec<f64> {
    let (w, h) = (d.width(), d.height());
    let n = (w * h) as f64;
    let data = d.as_slice();
    lags.iter()
        .map(|&(dx, dy)| {
            let mut acc = 0.0;
            for y in 0..h {
                let yy = (y as isize + dy).rem_euclid(h as isize) as usize;
                let row = &data[y * w..(y + 1) * w];
                let row2 = &data[yy * w..(yy + 1) * w];
                let sx = dx.rem_euclid(w as isize) as usize;
                for x in 0..w {
                    let xx = if x + sx >= w { x + sx - w } else { x + sx };
                    acc += row[x] * row2[xx];
                }
            }
            acc / n
        })
        .collect()
}

/// Gradient of `sum_t g[t] autocov(d)[t]` with respect to `d`, accumulated
/// into `out`. The result has zero mean, so it is also the gradient with
/// respect to the uncentred grid.
pub fn autocov_backprop(d: &RealGrid, lags: &[(isize, isize)], g: &[f64], out: &mut [f64]) {
    let (w, h) = (d.width(), d.height());
    let n = (w * h) as f64;
    for (&(dx, dy), &gt) in lags.iter().zip(g) {
        if gt == 0.0 {
            continue;
        }
        let k = gt / n;
        for y in 0..h {
            let yp = (y as isize + dy).rem_euclid(h as isize) as usize;
            let ym = (y as isize - dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let xp = (x as isize + dx).rem_euclid(w as isize) as usize;
                let xm = (x as isize - dx).rem_euclid(w as isize) as usize;
                out[y * w + x] += k * (d[(xp, yp)] + d[(xm, ym)]);
            }
        }
    }
}

/// Covariance of two centred samples.
pub fn cov(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Pearson correlation of two centred samples together with their
/// variances; zero when either variance vanishes.
pub fn corr(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let va = cov(a, a);
    let vb = cov(b, b);
    if va <= 0.0 || vb <= 0.0 {
        return (0.0, va, vb);
    }
    (cov(a, b) / (va * vb).sqrt(), va, vb)
}

/// Gradient of `g * corr(a, b)` for centred `a`, `b`.
pub fn corr_backprop(
    a: &[f64],
    b: &[f64],
    r: f64,
    va: f64,
    vb: f64,
    g: f64,
    out_a: &mut [f64],
    out_b: &mut [f64],
) {
    if va <= 0.0 || vb <= 0.0 || g == 0.0 {
        return;
    }
    let n = a.len() as f64;
    let s = (va * vb).sqrt();
    for i in 0..a.len() {
        out_a[i] += g * (b[i] / s - r * a[i] / va) / n;
        out_b[i] += g * (a[i] / s - r * b[i] / vb) / n;
    }
}

/// Nearest-neighbour 2x up-sampling.
pub fn upsample2(g: &RealGrid) -> RealGrid {
    RealGrid::from_fn(g.width() * 2, g.height() * 2, |x, y| g[(x / 2, y / 2)])
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_adjoint(g: &[f64], w: usize) -> Vec<f64> {
    let (hw, hh) = (w / 2, g.len() / w / 2);
    let mut out = vec![0.0; hw * hh];
    for y in 0..hh * 2 {
        for x in 0..w {
            out[(y / 2) * hw + x / 2] += g[y * w + x];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random::<f64>().powi(2)).collect()
    }

    #[test]
    fn moment_gradient_matches_finite_differences() {
        let v = rand_vec(40, 1);
        let (gm, gv, gs, gk) = (0.3, -0.7, 1.1, 0.4);
        let f = |v: &[f64]| {
            let m = Moments::of(v);
            gm * m.mean + gv * m.var + gs * m.skewness() + gk * m.kurtosis()
        };
        let mut grad = vec![0.0; v.len()];
        Moments::of(&v).backprop(&v, gm, gv, gs, gk, &mut grad);
        for i in 0..v.len() {
            let mut p = v.clone();
            p[i] += 1e-6;
            let mut m = v.clone();
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-6, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn autocov_gradient_matches_finite_differences() {
        let v = rand_vec(36, 2);
        let d = centered(&RealGrid::from_vec(6, 6, v).unwrap());
        let lags = crate::layout::half_window_lags(3);
        let g: Vec<f64> = (0..lags.len()).map(|i| 0.5 - i as f64 * 0.2).collect();
        let f = |d: &RealGrid| {
            autocov(d, &lags)
                .iter()
                .zip(&g)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut grad = vec![0.0; 36];
        autocov_backprop(&d, &lags, &g, &mut grad);
        for i in 0..36 {
            let mut p = d.clone();
            p.as_mut_slice()[i] += 1e-6;
            let mut m = d.clone();
            m.as_mut_slice()[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn autocov_is_centrally_symmetric() {
        let d = centered(&RealGrid::from_vec(8, 8, rand_vec(64, 3)).unwrap());
        let a = autocov(&d, &[(2, 1), (-2, -1)]);
        assert!((a[0] - a[1]).abs() < 1e-14);
    }

    #[test]
    fn upsample_adjoint_identity() {
        let a = RealGrid::from_vec(3, 3, rand_vec(9, 4)).unwrap();
        let b = rand_vec(36, 5);
        let lhs: f64 = upsample2(&a).as_slice().iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a
            .as_slice()
            .iter()
            .zip(upsample2_adjoint(&b, 6))
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
