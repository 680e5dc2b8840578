//! Texture statistics of an image and their vector-Jacobian product.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use super::params::{AnalysisConfig, TextureParams, KURT, MEAN, SKEW, VARIANCE};
use super::stats::{
    autocov, autocov_backprop, centered, corr, corr_backprop, cov, upsample2, upsample2_adjoint,
    Moments,
};
use crate::error::{Error, Result};
use crate::fft::{fft2_real, ifft2_real};
use crate::grid::{ComplexGrid, Grid, RealGrid};
use crate::layout::{Band, BlockKind, Layout};
use crate::pyramid::{self, PyramidPlan, SteerablePyramid};

/// Magnitudes below this are treated as zero when differentiating.
const TINY: f64 = 1e-150;

/// Relative variance floor: patches with pixel variance below
/// `VARIANCE_FLOOR * (max - min)^2` are rejected as degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Reusable analysis state for one configuration and image size.
#[derive(Debug, Clone)]
pub struct Analyzer {
    config: AnalysisConfig,
    plan: Arc<PyramidPlan>,
    masks: Vec<RealGrid>,
    layout: Arc<Layout>,
}

/// Intermediate values of a forward pass, consumed by [`Analyzer::vjp`].
#[derive(Debug, Clone)]
pub struct Trace {
    x: RealGrid,
    pixel: Moments,
    /// partial reconstructions (bands then low-pass): raw, moments, centred
    partials: Vec<(RealGrid, Moments, RealGrid)>,
    pyr: SteerablePyramid,
    /// centred magnitudes `[s][k]`
    mags: Vec<Vec<RealGrid>>,
    /// centred real parts of the bands `[s][k]`
    reals: Vec<Vec<Vec<f64>>>,
    /// centred phase-doubled, up-sampled parents for scales `1..S`: (re, im, raw parent)
    parents: Vec<Vec<(Vec<f64>, Vec<f64>, ComplexGrid)>>,
    /// centred up-sampled low-pass residual
    lowpass_up: Vec<f64>,
}

impl Trace {
    pub fn image(&self) -> &RealGrid {
        &self.x
    }
}

fn upsample2_complex(g: &ComplexGrid) -> ComplexGrid {
    Grid::from_fn(g.width() * 2, g.height() * 2, |x, y| g[(x / 2, y / 2)])
}

fn center_vec(v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.into_iter().map(|x| x - m).collect()
}

/// `p^2 / |p|`: doubles the phase, keeps the magnitude.
fn phase_double(p: Complex64) -> Complex64 {
    let r = p.norm();
    if r < TINY {
        Complex64::default()
    } else {
        p * p / r
    }
}

impl Analyzer {
    pub fn new(config: AnalysisConfig) -> Result<Analyzer> {
        config.validate()?;
        let plan = PyramidPlan::get(config.pyramid)?;
        let masks = plan.partial_masks();
        Ok(Analyzer {
            config,
            plan,
            masks,
            layout: Arc::new(config.layout()?),
        })
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Analyzes a patch, rejecting degenerate inputs and parameter sets
    /// that fail the validity audit.
    pub fn analyze(&self, patch: &RealGrid) -> Result<TextureParams> {
        let (lo, hi) = patch.min_max();
        let floor = VARIANCE_FLOOR * (hi - lo) * (hi - lo);
        self.check_input(patch)?;
        let var = patch.variance();
        if var <= floor || var <= 0.0 {
            return Err(Error::DegeneratePatch {
                variance: var,
                floor,
            });
        }
        let (params, _) = self.forward(patch)?;
        params.validate().map_err(|e| match e {
            Error::InvalidParams(m) => Error::InvalidParams(format!("degenerate patch: {m}")),
            other => other,
        })?;
        Ok(params)
    }

    fn check_input(&self, x: &RealGrid) -> Result<()> {
        let n = self.config.pyramid.image_size;
        if !x.is_square() || x.width() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{n} patch"),
                got: format!("{}x{}", x.width(), x.height()),
            });
        }
        x.ensure_finite("patch")
    }

    /// Computes all statistics without degeneracy checks, keeping the
    /// intermediates needed for differentiation.
    pub fn forward(&self, x: &RealGrid) -> Result<(TextureParams, Trace)> {
        self.check_input(x)?;
        let cfg = &self.config.pyramid;
        let (ns, nk) = (cfg.n_scales, cfg.n_orientations);
        let layout = &self.layout;
        let lags = layout.lags();
        let mut values = vec![0.0; layout.len()];
        let mut put = |kind: BlockKind, v: &[f64]| {
            values[layout.range(kind)].copy_from_slice(v);
        };

        let pixel = Moments::of(x.as_slice());
        put(
            BlockKind::PixelMoments,
            &[pixel.mean, pixel.var, pixel.skewness(), pixel.kurtosis()],
        );

        let freq = fft2_real(x);
        let mut partials = Vec::with_capacity(ns + 1);
        for bi in 0..=ns {
            let band = if bi < ns { Band::Scale(bi + 1) } else { Band::Lowpass };
            let mask = self.masks[bi + 1].as_slice();
            let filtered: Vec<Complex64> =
                freq.as_slice().iter().zip(mask).map(|(c, m)| c * m).collect();
            let r = ifft2_real(&Grid::from_vec(cfg.image_size, cfg.image_size, filtered)?);
            let m = Moments::of(r.as_slice());
            put(BlockKind::BandMoments(band), &[m.skewness(), m.kurtosis()]);
            let d = centered(&r);
            put(BlockKind::Autocov(band), &autocov(&d, lags));
            partials.push((r, m, d));
        }

        let pyr = pyramid::build_with_plan(&freq, &self.plan);
        let mags: Vec<Vec<RealGrid>> = pyr
            .bands
            .iter()
            .map(|row| row.iter().map(|b| centered(&b.abs())).collect())
            .collect();
        let reals: Vec<Vec<Vec<f64>>> = pyr
            .bands
            .iter()
            .map(|row| row.iter().map(|b| center_vec(b.re().into_vec())).collect())
            .collect();

        for s in 1..=ns {
            let mut centers = Vec::with_capacity(nk);
            for k in 0..nk {
                let a = autocov(&mags[s - 1][k], lags);
                centers.push(a[0]);
                put(BlockKind::MagAutocov { scale: s, orientation: k }, &a);
            }
            let mut tri = Vec::with_capacity(nk * (nk + 1) / 2);
            for i in 0..nk {
                for j in 0..=i {
                    tri.push(if i == j {
                        centers[i]
                    } else {
                        cov(mags[s - 1][i].as_slice(), mags[s - 1][j].as_slice())
                    });
                }
            }
            put(BlockKind::OrientCov { scale: s }, &tri);
        }

        let mut parents = Vec::with_capacity(ns.saturating_sub(1));
        for s in 1..ns {
            let up_mags: Vec<RealGrid> = mags[s].iter().map(upsample2).collect();
            let mut xs = Vec::with_capacity(nk * nk);
            for i in 0..nk {
                for up in &up_mags {
                    xs.push(cov(mags[s - 1][i].as_slice(), up.as_slice()));
                }
            }
            put(BlockKind::XscaleCov { scale: s }, &xs);

            let mut row = Vec::with_capacity(nk);
            let mut ph = Vec::with_capacity(2 * nk);
            for k in 0..nk {
                let up = upsample2_complex(&pyr.bands[s][k]);
                let doubled: Vec<Complex64> = up.as_slice().iter().map(|&p| phase_double(p)).collect();
                let re = center_vec(doubled.iter().map(|c| c.re).collect());
                let im = center_vec(doubled.iter().map(|c| c.im).collect());
                let child = &reals[s - 1][k];
                ph.push(corr(child, &re).0);
                ph.push(corr(child, &im).0);
                row.push((re, im, up));
            }
            put(BlockKind::PhaseCorr { scale: s }, &ph);
            parents.push(row);
        }

        let lowpass_up = center_vec(upsample2(&pyr.lowpass).into_vec());
        let lp: Vec<f64> = (0..nk)
            .map(|k| corr(&reals[ns - 1][k], &lowpass_up).0)
            .collect();
        put(BlockKind::LowpassPhaseCorr, &lp);

        let params = TextureParams::new(values, layout.clone())?;
        Ok((
            params,
            Trace {
                x: x.clone(),
                pixel,
                partials,
                pyr,
                mags,
                reals,
                parents,
                lowpass_up,
            },
        ))
    }

    /// Gradient with respect to the image of `sum_i g[i] * params[i]`.
    pub fn vjp(&self, t: &Trace, g: &[f64]) -> Result<RealGrid> {
        let layout = &self.layout;
        layout.check_len(g.len())?;
        let cfg = &self.config.pyramid;
        let (ns, nk, n0) = (cfg.n_scales, cfg.n_orientations, cfg.image_size);
        let lags = layout.lags();
        let gb = |kind: BlockKind| &g[layout.range(kind)];
        let nonzero = |v: &[f64]| v.iter().any(|&x| x != 0.0);

        let mut gx = vec![0.0; n0 * n0];
        let gp = gb(BlockKind::PixelMoments);
        t.pixel
            .backprop(t.x.as_slice(), gp[MEAN], gp[VARIANCE], gp[SKEW], gp[KURT], &mut gx);

        // partial reconstructions: accumulate in the frequency domain
        let mut gspec = vec![Complex64::default(); n0 * n0];
        for (bi, (r, m, d)) in t.partials.iter().enumerate() {
            let band = if bi < ns { Band::Scale(bi + 1) } else { Band::Lowpass };
            let gm = gb(BlockKind::BandMoments(band));
            let ga = gb(BlockKind::Autocov(band));
            if !nonzero(gm) && !nonzero(ga) {
                continue;
            }
            let mut gr = vec![0.0; n0 * n0];
            m.backprop(r.as_slice(), 0.0, 0.0, gm[0], gm[1], &mut gr);
            autocov_backprop(d, lags, ga, &mut gr);
            let f = fft2_real(&Grid::from_vec(n0, n0, gr)?);
            for ((acc, c), w) in gspec
                .iter_mut()
                .zip(f.as_slice())
                .zip(self.masks[bi + 1].as_slice())
            {
                *acc += c * w;
            }
        }
        let from_partials = ifft2_real(&Grid::from_vec(n0, n0, gspec)?);
        for (a, b) in gx.iter_mut().zip(from_partials.as_slice()) {
            *a += b;
        }

        // gradients on magnitudes, real parts and imaginary parts per band
        let sizes: Vec<usize> = (1..=ns).map(|s| cfg.band_size(s)).collect();
        let zeros = |s: usize| vec![vec![0.0; sizes[s] * sizes[s]]; nk];
        let mut g_mag: Vec<Vec<Vec<f64>>> = (0..ns).map(zeros).collect();
        let mut g_re: Vec<Vec<Vec<f64>>> = (0..ns).map(zeros).collect();
        let mut g_im: Vec<Vec<Vec<f64>>> = (0..ns).map(zeros).collect();
        let mut g_low = vec![0.0; cfg.lowpass_size() * cfg.lowpass_size()];

        for s in 1..=ns {
            let nn = (sizes[s - 1] * sizes[s - 1]) as f64;
            for k in 0..nk {
                let ga = gb(BlockKind::MagAutocov { scale: s, orientation: k });
                if nonzero(ga) {
                    autocov_backprop(&t.mags[s - 1][k], lags, ga, &mut g_mag[s - 1][k]);
                }
            }
            let go = gb(BlockKind::OrientCov { scale: s });
            let mut idx = 0;
            for i in 0..nk {
                for j in 0..=i {
                    let gv = go[idx];
                    idx += 1;
                    if gv == 0.0 {
                        continue;
                    }
                    let di = t.mags[s - 1][i].as_slice().to_vec();
                    let dj = t.mags[s - 1][j].as_slice();
                    if i == j {
                        for (o, v) in g_mag[s - 1][i].iter_mut().zip(&di) {
                            *o += 2.0 * gv * v / nn;
                        }
                    } else {
                        for (o, v) in g_mag[s - 1][i].iter_mut().zip(dj) {
                            *o += gv * v / nn;
                        }
                        for (o, v) in g_mag[s - 1][j].iter_mut().zip(&di) {
                            *o += gv * v / nn;
                        }
                    }
                }
            }
        }

        for s in 1..ns {
            let w = sizes[s - 1];
            let nn = (w * w) as f64;
            let gxs = gb(BlockKind::XscaleCov { scale: s });
            if nonzero(gxs) {
                for j in 0..nk {
                    let up = upsample2(&t.mags[s][j]);
                    let mut g_up = vec![0.0; w * w];
                    for i in 0..nk {
                        let gv = gxs[i * nk + j];
                        if gv == 0.0 {
                            continue;
                        }
                        let child = t.mags[s - 1][i].as_slice();
                        for (o, v) in g_mag[s - 1][i].iter_mut().zip(up.as_slice()) {
                            *o += gv * v / nn;
                        }
                        for (o, v) in g_up.iter_mut().zip(child) {
                            *o += gv * v / nn;
                        }
                    }
                    for (o, v) in g_mag[s][j].iter_mut().zip(upsample2_adjoint(&g_up, w)) {
                        *o += v;
                    }
                }
            }

            let gph = gb(BlockKind::PhaseCorr { scale: s });
            if nonzero(gph) {
                for k in 0..nk {
                    let (re, im, up) = &t.parents[s - 1][k];
                    let child = &t.reals[s - 1][k];
                    let mut g_hre = vec![0.0; w * w];
                    let mut g_him = vec![0.0; w * w];
                    let (r1, va, vb) = corr(child, re);
                    corr_backprop(child, re, r1, va, vb, gph[2 * k], &mut g_re[s - 1][k], &mut g_hre);
                    let (r2, va, vb) = corr(child, im);
                    corr_backprop(child, im, r2, va, vb, gph[2 * k + 1], &mut g_re[s - 1][k], &mut g_him);
                    // through the phase doubling p -> p^2/|p|
                    let mut g_pa = vec![0.0; w * w];
                    let mut g_pb = vec![0.0; w * w];
                    for (i, p) in up.as_slice().iter().enumerate() {
                        let rho = p.norm();
                        if rho < TINY {
                            continue;
                        }
                        let (a, b) = (p.re, p.im);
                        let r3 = rho * rho * rho;
                        let dre_da = 2.0 * a / rho - (a * a - b * b) * a / r3;
                        let dre_db = -2.0 * b / rho - (a * a - b * b) * b / r3;
                        let dim_da = 2.0 * b / rho - 2.0 * a * b * a / r3;
                        let dim_db = 2.0 * a / rho - 2.0 * a * b * b / r3;
                        g_pa[i] = g_hre[i] * dre_da + g_him[i] * dim_da;
                        g_pb[i] = g_hre[i] * dre_db + g_him[i] * dim_db;
                    }
                    for (o, v) in g_re[s][k].iter_mut().zip(upsample2_adjoint(&g_pa, w)) {
                        *o += v;
                    }
                    for (o, v) in g_im[s][k].iter_mut().zip(upsample2_adjoint(&g_pb, w)) {
                        *o += v;
                    }
                }
            }
        }

        let glp = gb(BlockKind::LowpassPhaseCorr);
        if nonzero(glp) {
            let w = sizes[ns - 1];
            let mut g_up = vec![0.0; w * w];
            for k in 0..nk {
                let child = &t.reals[ns - 1][k];
                let (r, va, vb) = corr(child, &t.lowpass_up);
                corr_backprop(child, &t.lowpass_up, r, va, vb, glp[k], &mut g_re[ns - 1][k], &mut g_up);
            }
            for (o, v) in g_low.iter_mut().zip(upsample2_adjoint(&g_up, w)) {
                *o += v;
            }
        }

        let mut gpyr = SteerablePyramid::zeros(*cfg);
        for s in 0..ns {
            for k in 0..nk {
                let band = &t.pyr.bands[s][k];
                let out = gpyr.bands[s][k].as_mut_slice();
                for (i, c) in band.as_slice().iter().enumerate() {
                    let mut gr = g_re[s][k][i];
                    let mut gi = g_im[s][k][i];
                    let rho = c.norm();
                    if rho >= TINY {
                        gr += g_mag[s][k][i] * c.re / rho;
                        gi += g_mag[s][k][i] * c.im / rho;
                    }
                    out[i] = Complex64::new(gr, gi);
                }
            }
        }
        gpyr.lowpass = Grid::from_vec(cfg.lowpass_size(), cfg.lowpass_size(), g_low)?;
        let from_pyr = pyramid::adjoint(&gpyr)?;
        for (a, b) in gx.iter_mut().zip(from_pyr.as_slice()) {
            *a += b;
        }
        Grid::from_vec(n0, n0, gx)
    }
}

/// Analyzes a patch with a one-off [`Analyzer`].
pub fn analyze(patch: &RealGrid, config: &AnalysisConfig) -> Result<TextureParams> {
    Analyzer::new(*config)?.analyze(patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::PyramidConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn small_config() -> AnalysisConfig {
        AnalysisConfig {
            pyramid: PyramidConfig::new(3, 4, 32).unwrap(),
            na: 5,
            n_scramble_repeats: 2,
        }
    }

    fn skewed_noise(n: usize, seed: u64) -> RealGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: RealGrid = Grid::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        // mild smoothing plus a nonlinearity for non-trivial statistics
        let sm = Grid::from_fn(n, n, |x, y| {
            let (x, y) = (x as isize, y as isize);
            g.wrapped(x, y) + 0.5 * g.wrapped(x + 1, y) + 0.3 * g.wrapped(x, y + 1)
        });
        sm.map(|v| v + 0.3 * v * v)
    }

    #[test]
    fn default_length_is_655() {
        let a = Analyzer::new(AnalysisConfig::default()).unwrap();
        let p = a.analyze(&skewed_noise(64, 1)).unwrap();
        assert_eq!(p.len(), 655);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let a = Analyzer::new(small_config()).unwrap();
        let x = skewed_noise(32, 2);
        let (p, trace) = a.forward(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // weights scaled so every block contributes comparably
        let w: Vec<f64> = p
            .values
            .iter()
            .map(|v| (rng.random::<f64>() - 0.5) / v.abs().max(0.1))
            .collect();
        let f = |x: &RealGrid| -> f64 {
            let (q, _) = a.forward(x).unwrap();
            q.values.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let grad = a.vjp(&trace, &w).unwrap();
        let h = 1e-5;
        for &i in &[0usize, 17, 100, 333, 512, 700, 1023] {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let an = grad.as_slice()[i];
            assert!(
                (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                "pixel {i}: finite difference {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn per_group_vjp_matches_finite_differences() {
        let a = Analyzer::new(small_config()).unwrap();
        let x = skewed_noise(32, 4);
        let (p, trace) = a.forward(&x).unwrap();
        for block in a.layout().blocks() {
            let mut w = vec![0.0; p.len()];
            for i in block.range() {
                w[i] = 1.0 / p.values[i].abs().max(0.1);
            }
            let grad = a.vjp(&trace, &w).unwrap();
            let f = |x: &RealGrid| -> f64 {
                let (q, _) = a.forward(x).unwrap();
                q.values.iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let i = 77 + block.offset % 500;
            let h = 1e-5;
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let an = grad.as_slice()[i];
            assert!(
                (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                "{:?}: finite difference {fd} vs analytic {an}",
                block.kind
            );
        }
    }

    #[test]
    fn soc_invariant_under_circular_shift() {
        let a = Analyzer::new(AnalysisConfig::default()).unwrap();
        let x = skewed_noise(64, 5);
        let p = a.analyze(&x).unwrap();
        let q = a.analyze(&x.roll(1, 1)).unwrap();
        for band in (1..=4).map(Band::Scale).chain([Band::Lowpass]) {
            for (u, v) in p
                .block(BlockKind::Autocov(band))
                .iter()
                .zip(q.block(BlockKind::Autocov(band)))
            {
                assert!((u - v).abs() < 1e-6 * u.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn constant_patch_is_degenerate() {
        let a = Analyzer::new(AnalysisConfig::default()).unwrap();
        let r = a.analyze(&RealGrid::filled(64, 64, 7.0));
        assert!(matches!(r, Err(Error::DegeneratePatch { .. })));
    }

    #[test]
    fn wrong_size_rejected() {
        let a = Analyzer::new(AnalysisConfig::default()).unwrap();
        assert!(matches!(
            a.analyze(&RealGrid::filled(32, 32, 1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn analysis_is_deterministic_and_valid() {
        let a = Analyzer::new(AnalysisConfig::default()).unwrap();
        let x = skewed_noise(64, 6);
        let p = a.analyze(&x).unwrap();
        let q = a.analyze(&x).unwrap();
        assert_eq!(p.values, q.values);
        p.validate().unwrap();
    }
}
