//! Complex steerable pyramid computed in the frequency domain.
//!
//! The decomposition uses raised-cosine radial windows in log-frequency and
//! one-sided `cos^(K-1)` angular windows, so that each oriented band is
//! complex with an even-symmetric real part and an odd-symmetric imaginary
//! part. Boundaries are periodic. The transform is a Parseval frame: with
//! `lo^2 + hi^2 = 1` at every level and an energy-preserving spectral
//! down-sampling, [`reconstruct`] inverts [`build_pyramid`] exactly and
//! also serves as its adjoint (bands weighted by two, see [`adjoint`]).
//!
//! Band `s` (1-based, 1 = finest) has `image_size / 2^(s-1)` samples per
//! side; the low-pass residual has `image_size / 2^n_scales`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, fft2_real, freq_index, ifft2, ifft2_real};
use crate::grid::{ComplexGrid, Grid, RealGrid};

/// Environment variable naming a directory where filter masks are persisted.
pub const CACHE_ENV: &str = "TEXSUR_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    pub n_scales: usize,
    pub n_orientations: usize,
    pub image_size: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            n_scales: 4,
            n_orientations: 4,
            image_size: 64,
        }
    }
}

impl PyramidConfig {
    pub fn new(n_scales: usize, n_orientations: usize, image_size: usize) -> Result<Self> {
        let cfg = PyramidConfig {
            n_scales,
            n_orientations,
            image_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales == 0 || self.n_orientations == 0 {
            return Err(Error::InvalidConfig(
                "n_scales and n_orientations must be at least 1".into(),
            ));
        }
        if !self.image_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "image size {} is not a power of two",
                self.image_size
            )));
        }
        if self.n_scales >= usize::BITS as usize || self.image_size >> self.n_scales < 4 {
            return Err(Error::InvalidConfig(format!(
                "{} scales leave fewer than 4x4 low-pass coefficients on a {}x{} image",
                self.n_scales, self.image_size, self.image_size
            )));
        }
        Ok(())
    }

    /// Same filter bank on a different image size.
    pub fn with_size(&self, image_size: usize) -> Self {
        PyramidConfig {
            image_size,
            ..*self
        }
    }

    /// Side length of the band at 1-based `scale`.
    pub fn band_size(&self, scale: usize) -> usize {
        self.image_size >> (scale - 1)
    }

    pub fn lowpass_size(&self) -> usize {
        self.image_size >> self.n_scales
    }
}

/// Selector for [`reconstruct_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSel {
    Highpass,
    /// 1-based band scale.
    Band(usize),
    Lowpass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerablePyramid {
    pub config: PyramidConfig,
    /// `bands[s][k]`: scale `s + 1`, orientation `k`.
    pub bands: Vec<Vec<ComplexGrid>>,
    pub highpass: RealGrid,
    pub lowpass: RealGrid,
}

impl SteerablePyramid {
    pub fn zeros(config: PyramidConfig) -> Self {
        let bands = (1..=config.n_scales)
            .map(|s| {
                (0..config.n_orientations)
                    .map(|_| ComplexGrid::square(config.band_size(s)))
                    .collect()
            })
            .collect();
        SteerablePyramid {
            config,
            bands,
            highpass: RealGrid::square(config.image_size),
            lowpass: RealGrid::square(config.lowpass_size()),
        }
    }

    pub fn band(&self, scale: usize, orientation: usize) -> &ComplexGrid {
        &self.bands[scale - 1][orientation]
    }

    /// Coefficient-wise sum of two pyramids with the same configuration.
    pub fn add(&self, other: &SteerablePyramid) -> Result<SteerablePyramid> {
        if self.config != other.config {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.config),
                got: format!("{:?}", other.config),
            });
        }
        let mut out = self.clone();
        out.highpass.add_assign(&other.highpass);
        out.lowpass.add_assign(&other.lowpass);
        for (bs, os) in out.bands.iter_mut().zip(&other.bands) {
            for (b, o) in bs.iter_mut().zip(os) {
                for (x, y) in b.as_mut_slice().iter_mut().zip(o.as_slice()) {
                    *x += y;
                }
            }
        }
        Ok(out)
    }

    fn check_shapes(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let bad = |what: &str, want: usize, got: &str| Error::DimensionMismatch {
            expected: format!("{what} of side {want}"),
            got: got.to_string(),
        };
        if !self.highpass.is_square() || self.highpass.width() != cfg.image_size {
            return Err(bad(
                "highpass",
                cfg.image_size,
                &format!("{}x{}", self.highpass.width(), self.highpass.height()),
            ));
        }
        if !self.lowpass.is_square() || self.lowpass.width() != cfg.lowpass_size() {
            return Err(bad(
                "lowpass",
                cfg.lowpass_size(),
                &format!("{}x{}", self.lowpass.width(), self.lowpass.height()),
            ));
        }
        if self.bands.len() != cfg.n_scales {
            return Err(bad("band list", cfg.n_scales, &self.bands.len().to_string()));
        }
        for (s, row) in self.bands.iter().enumerate() {
            if row.len() != cfg.n_orientations {
                return Err(bad(
                    "orientation list",
                    cfg.n_orientations,
                    &row.len().to_string(),
                ));
            }
            let want = cfg.band_size(s + 1);
            for b in row {
                if !b.is_square() || b.width() != want {
                    return Err(bad(
                        "band",
                        want,
                        &format!("{}x{}", b.width(), b.height()),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Frequency-domain filters for one pyramid configuration.
#[derive(Debug)]
pub struct PyramidPlan {
    pub config: PyramidConfig,
    hi0: Vec<f64>,
    lo0: Vec<f64>,
    levels: Vec<LevelFilters>,
}

#[derive(Debug)]
struct LevelFilters {
    n: usize,
    lo: Vec<f64>,
    /// radial high-pass times one-sided angular window, per orientation
    band: Vec<Vec<f64>>,
}

/// Raised-cosine transition: 0 below `log2 r = -1 - shift`, 1 above `-shift`.
fn transition(log2r: f64, shift: f64) -> f64 {
    (log2r + 1.0 + shift).clamp(0.0, 1.0)
}

fn radius_angle(u: usize, v: usize, n: usize) -> (f64, f64) {
    let fx = freq_index(u, n) as f64;
    let fy = freq_index(v, n) as f64;
    // normalized so that the Nyquist frequency on an axis is 1
    let r = 2.0 * (fx * fx + fy * fy).sqrt() / n as f64;
    (r, fy.atan2(fx))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

impl PyramidPlan {
    fn compute(config: PyramidConfig) -> Self {
        let n0 = config.image_size;
        let k_or = config.n_orientations;
        let order = k_or - 1;
        let alpha = (2f64.powi(2 * order as i32) * factorial(order).powi(2)
            / (k_or as f64 * factorial(2 * order)))
            .sqrt();

        let mut hi0 = vec![0.0; n0 * n0];
        let mut lo0 = vec![0.0; n0 * n0];
        for v in 0..n0 {
            for u in 0..n0 {
                let (r, _) = radius_angle(u, v, n0);
                let t = if r > 0.0 { transition(r.log2(), 0.0) } else { 0.0 };
                hi0[v * n0 + u] = (FRAC_PI_2 * t).sin();
                lo0[v * n0 + u] = (FRAC_PI_2 * t).cos();
            }
        }

        let levels = (0..config.n_scales)
            .map(|s| {
                let n = n0 >> s;
                let mut lo = vec![0.0; n * n];
                let mut band = vec![vec![0.0; n * n]; k_or];
                for v in 0..n {
                    for u in 0..n {
                        let (r, theta) = radius_angle(u, v, n);
                        let t = if r > 0.0 { transition(r.log2(), 1.0) } else { 0.0 };
                        let hi = (FRAC_PI_2 * t).sin();
                        lo[v * n + u] = (FRAC_PI_2 * t).cos();
                        if hi == 0.0 {
                            continue;
                        }
                        for (k, mask) in band.iter_mut().enumerate() {
                            let c = (theta - PI * k as f64 / k_or as f64).cos();
                            if c > 0.0 {
                                mask[v * n + u] = hi * 2.0 * alpha * c.powi(order as i32);
                            }
                        }
                    }
                }
                LevelFilters { n, lo, band }
            })
            .collect();

        PyramidPlan {
            config,
            hi0,
            lo0,
            levels,
        }
    }

    /// Returns the shared plan for `config`, computing it at most once per
    /// process. When [`CACHE_ENV`] names a directory, masks are also
    /// persisted there.
    pub fn get(config: PyramidConfig) -> Result<Arc<PyramidPlan>> {
        config.validate()?;
        static PLANS: OnceLock<Mutex<HashMap<PyramidConfig, Arc<PyramidPlan>>>> =
            OnceLock::new();
        let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(p) = plans.lock().expect("plan cache poisoned").get(&config) {
            return Ok(p.clone());
        }
        let plan = Arc::new(Self::load_or_compute(config));
        let mut guard = plans.lock().expect("plan cache poisoned");
        Ok(guard.entry(config).or_insert(plan).clone())
    }

    fn cache_path(config: &PyramidConfig) -> Option<PathBuf> {
        let dir = std::env::var_os(CACHE_ENV)?;
        Some(PathBuf::from(dir).join(format!(
            "pyr-{}-{}-{}.bin",
            config.image_size, config.n_scales, config.n_orientations
        )))
    }

    fn load_or_compute(config: PyramidConfig) -> Self {
        if let Some(path) = Self::cache_path(&config) {
            if let Some(plan) = Self::load(&path, config) {
                return plan;
            }
            let plan = Self::compute(config);
            if let Err(e) = plan.store(&path) {
                log::warn!("could not write pyramid cache {}: {e}", path.display());
            }
            return plan;
        }
        Self::compute(config)
    }

    fn arrays(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.hi0, &self.lo0];
        for l in &self.levels {
            out.push(&l.lo);
            out.extend(l.band.iter());
        }
        out
    }

    fn store(&self, path: &std::path::Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        for a in self.arrays() {
            for v in a {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn load(path: &std::path::Path, config: PyramidConfig) -> Option<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path).ok()?.read_to_end(&mut bytes).ok()?;
        let mut plan = Self::compute_shape(config);
        let total: usize = plan.arrays().iter().map(|a| a.len()).sum();
        if bytes.len() != total * 8 {
            return None;
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut fill = |a: &mut Vec<f64>| {
            for v in a.iter_mut() {
                *v = vals.next().expect("length checked");
            }
        };
        fill(&mut plan.hi0);
        fill(&mut plan.lo0);
        for l in &mut plan.levels {
            fill(&mut l.lo);
            for b in &mut l.band {
                fill(b);
            }
        }
        Some(plan)
    }

    fn compute_shape(config: PyramidConfig) -> Self {
        let n0 = config.image_size;
        PyramidPlan {
            config,
            hi0: vec![0.0; n0 * n0],
            lo0: vec![0.0; n0 * n0],
            levels: (0..config.n_scales)
                .map(|s| {
                    let n = n0 >> s;
                    LevelFilters {
                        n,
                        lo: vec![0.0; n * n],
                        band: vec![vec![0.0; n * n]; config.n_orientations],
                    }
                })
                .collect(),
        }
    }

    /// Real, even spectral masks on the full-resolution grid whose inverse
    /// transforms give the partial reconstructions: index 0 is the
    /// high-pass residual, `1..=n_scales` the bands, last the low-pass.
    /// They sum to one at every frequency.
    pub fn partial_masks(&self) -> Vec<RealGrid> {
        let n0 = self.config.image_size;
        let s_count = self.config.n_scales;
        let mut masks = vec![RealGrid::square(n0); s_count + 2];
        for v in 0..n0 {
            for u in 0..n0 {
                let (r, _) = radius_angle(u, v, n0);
                let i = v * n0 + u;
                masks[0][(u, v)] = self.hi0[i] * self.hi0[i];
                let mut chain = self.lo0[i] * self.lo0[i];
                for s in 0..s_count {
                    // level-s radius of this physical frequency
                    let rs = r * (1u64 << s) as f64;
                    let t = if rs > 0.0 { transition(rs.log2(), 1.0) } else { 0.0 };
                    let hi = (FRAC_PI_2 * t).sin();
                    let lo = (FRAC_PI_2 * t).cos();
                    masks[s + 1][(u, v)] = chain * hi * hi;
                    chain *= lo * lo;
                }
                masks[s_count + 1][(u, v)] = chain;
            }
        }
        masks
    }
}

/// Keeps the central `n/2` frequencies of an `n`-point spectrum, scaled to
/// preserve energy.
fn downsample_spectrum(freq: &ComplexGrid) -> ComplexGrid {
    let n = freq.side();
    let m = n / 2;
    Grid::from_fn(m, m, |u, v| {
        let bu = freq_index(u, m).rem_euclid(n as isize) as usize;
        let bv = freq_index(v, m).rem_euclid(n as isize) as usize;
        freq[(bu, bv)] * 0.5
    })
}

/// Adjoint of [`downsample_spectrum`].
fn upsample_spectrum(freq: &ComplexGrid) -> ComplexGrid {
    let m = freq.side();
    let n = m * 2;
    let mut out = ComplexGrid::square(n);
    for v in 0..m {
        for u in 0..m {
            let bu = freq_index(u, m).rem_euclid(n as isize) as usize;
            let bv = freq_index(v, m).rem_euclid(n as isize) as usize;
            out[(bu, bv)] = freq[(u, v)] * 2.0;
        }
    }
    out
}

fn mul_mask(freq: &ComplexGrid, mask: &[f64]) -> ComplexGrid {
    let data = freq
        .as_slice()
        .iter()
        .zip(mask)
        .map(|(c, &m)| c * m)
        .collect();
    Grid::from_vec(freq.width(), freq.height(), data).expect("same shape")
}

fn check_image(image: &RealGrid, config: &PyramidConfig) -> Result<()> {
    if !image.is_square() || image.width() != config.image_size {
        return Err(Error::DimensionMismatch {
            expected: format!("{0}x{0} image", config.image_size),
            got: format!("{}x{}", image.width(), image.height()),
        });
    }
    image.ensure_finite("pyramid input")
}

pub fn build_pyramid(image: &RealGrid, config: PyramidConfig) -> Result<SteerablePyramid> {
    check_image(image, &config)?;
    let plan = PyramidPlan::get(config)?;
    Ok(build_with_plan(&fft2_real(image), &plan))
}

/// Decomposes an image given its (unnormalized) spectrum.
pub(crate) fn build_with_plan(spectrum: &ComplexGrid, plan: &PyramidPlan) -> SteerablePyramid {
    let config = plan.config;
    let highpass = ifft2_real(&mul_mask(spectrum, &plan.hi0));
    let mut low = mul_mask(spectrum, &plan.lo0);
    let mut bands = Vec::with_capacity(config.n_scales);
    for level in &plan.levels {
        debug_assert_eq!(low.side(), level.n);
        let row = level
            .band
            .iter()
            .map(|mask| ifft2(&mul_mask(&low, mask)))
            .collect();
        bands.push(row);
        low = downsample_spectrum(&mul_mask(&low, &level.lo));
    }
    let lowpass = ifft2_real(&low);
    SteerablePyramid {
        config,
        bands,
        highpass,
        lowpass,
    }
}

pub fn reconstruct(pyr: &SteerablePyramid) -> Result<RealGrid> {
    pyr.check_shapes()?;
    let plan = PyramidPlan::get(pyr.config)?;
    Ok(collapse(pyr, &plan, 1.0, true, true, None))
}

/// Adjoint of [`build_pyramid`] with respect to the real inner product
/// where a complex band is paired as `Re(a)Re(b) + Im(a)Im(b)`.
pub fn adjoint(pyr: &SteerablePyramid) -> Result<RealGrid> {
    pyr.check_shapes()?;
    let plan = PyramidPlan::get(pyr.config)?;
    Ok(collapse(pyr, &plan, 2.0, true, true, None))
}

/// Inverse transform of the bands of one scale only (or one residual).
pub fn reconstruct_scale(pyr: &SteerablePyramid, scale: ScaleSel) -> Result<RealGrid> {
    pyr.check_shapes()?;
    let plan = PyramidPlan::get(pyr.config)?;
    Ok(match scale {
        ScaleSel::Highpass => collapse(pyr, &plan, 0.0, true, false, None),
        ScaleSel::Lowpass => collapse(pyr, &plan, 0.0, false, true, None),
        ScaleSel::Band(s) => {
            if s == 0 || s > pyr.config.n_scales {
                return Err(Error::OutOfRange(format!(
                    "scale {s} outside 1..={}",
                    pyr.config.n_scales
                )));
            }
            collapse(pyr, &plan, 1.0, false, false, Some(s))
        }
    })
}

/// Shared synthesis path. `band_weight` scales every band contribution;
/// `only_scale` restricts bands to one 1-based scale.
fn collapse(
    pyr: &SteerablePyramid,
    plan: &PyramidPlan,
    band_weight: f64,
    with_highpass: bool,
    with_lowpass: bool,
    only_scale: Option<usize>,
) -> RealGrid {
    let n_scales = plan.config.n_scales;
    let mut low = if with_lowpass {
        fft2_real(&pyr.lowpass)
    } else {
        ComplexGrid::square(plan.config.lowpass_size())
    };
    for s in (0..n_scales).rev() {
        let level = &plan.levels[s];
        let mut freq = mul_mask(&upsample_spectrum(&low), &level.lo);
        let use_band = band_weight != 0.0 && only_scale.is_none_or(|o| o == s + 1);
        if use_band {
            for (band, mask) in pyr.bands[s].iter().zip(&level.band) {
                let f = fft2(band);
                for ((acc, c), &m) in freq.as_mut_slice().iter_mut().zip(f.as_slice()).zip(mask) {
                    // real part taken at the end halves the one-sided response
                    *acc += c * (m * 0.5 * band_weight);
                }
            }
        }
        low = freq;
    }
    let mut full = mul_mask(&low, &plan.lo0);
    if with_highpass {
        let h = mul_mask(&fft2_real(&pyr.highpass), &plan.hi0);
        for (a, b) in full.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *a += b;
        }
    }
    // Re(ifft(Z)) equals ifft of the Hermitian part of Z
    ifft2_real(&full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rustfft::num_complex::Complex64;
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> RealGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn config_validation() {
        assert!(PyramidConfig::new(4, 4, 64).is_ok());
        assert!(PyramidConfig::new(5, 4, 64).is_err());
        assert!(PyramidConfig::new(4, 4, 48).is_err());
        assert!(PyramidConfig::new(0, 4, 64).is_err());
        assert!(PyramidConfig::new(4, 0, 64).is_err());
    }

    #[test]
    fn band_sizes_follow_octaves() {
        let cfg = PyramidConfig::default();
        let p = build_pyramid(&noise(64, 1), cfg).unwrap();
        assert_eq!(p.band(1, 0).side(), 64);
        assert_eq!(p.band(4, 3).side(), 8);
        assert_eq!(p.lowpass.side(), 4);
    }

    #[test]
    fn round_trip_white_noise() {
        let img = noise(64, 2);
        let p = build_pyramid(&img, PyramidConfig::default()).unwrap();
        let back = reconstruct(&p).unwrap();
        assert!(img.rms_diff(&back) / img.rms() < 1e-9);
    }

    #[test]
    fn constant_image_has_no_band_energy() {
        let img = RealGrid::filled(64, 64, 3.0);
        let p = build_pyramid(&img, PyramidConfig::default()).unwrap();
        for row in &p.bands {
            for b in row {
                assert!(b.as_slice().iter().all(|c| c.norm() < 1e-10));
            }
        }
        assert!(p.highpass.rms() < 1e-10);
        // each spectral halving doubles the DC gain
        let gain = 2f64.powi(4);
        for v in p.lowpass.as_slice() {
            assert!((v - 3.0 * gain).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_pyramid_gives_zero_image() {
        let p = SteerablePyramid::zeros(PyramidConfig::default());
        assert!(reconstruct(&p).unwrap().rms() == 0.0);
    }

    #[test]
    fn additivity_of_partial_reconstructions() {
        let img = noise(64, 3);
        let p = build_pyramid(&img, PyramidConfig::default()).unwrap();
        let mut sum = reconstruct_scale(&p, ScaleSel::Highpass).unwrap();
        sum.add_assign(&reconstruct_scale(&p, ScaleSel::Lowpass).unwrap());
        for s in 1..=4 {
            sum.add_assign(&reconstruct_scale(&p, ScaleSel::Band(s)).unwrap());
        }
        assert!(img.rms_diff(&sum) / img.rms() < 1e-9);
    }

    #[test]
    fn partial_masks_match_reconstruct_scale() {
        let img = noise(32, 4);
        let cfg = PyramidConfig::new(3, 4, 32).unwrap();
        let plan = PyramidPlan::get(cfg).unwrap();
        let masks = plan.partial_masks();
        let p = build_pyramid(&img, cfg).unwrap();
        let freq = fft2_real(&img);
        let sels = [
            ScaleSel::Highpass,
            ScaleSel::Band(1),
            ScaleSel::Band(2),
            ScaleSel::Band(3),
            ScaleSel::Lowpass,
        ];
        for (mask, sel) in masks.iter().zip(sels) {
            let via_mask = ifft2_real(&mul_mask(&freq, mask.as_slice()));
            let via_pyr = reconstruct_scale(&p, sel).unwrap();
            assert!(via_mask.rms_diff(&via_pyr) < 1e-12, "{sel:?}");
        }
    }

    #[test]
    fn scale_out_of_range() {
        let p = SteerablePyramid::zeros(PyramidConfig::default());
        assert!(reconstruct_scale(&p, ScaleSel::Band(0)).is_err());
        assert!(reconstruct_scale(&p, ScaleSel::Band(5)).is_err());
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let mut p = SteerablePyramid::zeros(PyramidConfig::default());
        p.bands[1][0] = ComplexGrid::square(16);
        assert!(reconstruct(&p).is_err());
    }

    #[test]
    fn real_part_even_imag_part_odd() {
        // impulse response of an oriented band: real part symmetric, imaginary antisymmetric
        let n = 32;
        let cfg = PyramidConfig::new(2, 4, n).unwrap();
        let mut img = RealGrid::square(n);
        img[(0, 0)] = 1.0;
        let p = build_pyramid(&img, cfg).unwrap();
        let b = p.band(1, 1);
        for y in 0..n {
            for x in 0..n {
                let a = b[(x, y)];
                let m = *b.wrapped(-(x as isize), -(y as isize));
                assert!((a.re - m.re).abs() < 1e-12);
                assert!((a.im + m.im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let cfg = PyramidConfig::new(3, 4, 32).unwrap();
        let x = noise(32, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut y = SteerablePyramid::zeros(cfg);
        for row in &mut y.bands {
            for b in row {
                for c in b.as_mut_slice() {
                    *c = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                }
            }
        }
        for v in y.highpass.as_mut_slice() {
            *v = rng.random::<f64>() - 0.5;
        }
        for v in y.lowpass.as_mut_slice() {
            *v = rng.random::<f64>() - 0.5;
        }
        let ax = build_pyramid(&x, cfg).unwrap();
        let mut lhs = 0.0;
        for (ra, ry) in ax.bands.iter().zip(&y.bands) {
            for (a, b) in ra.iter().zip(ry) {
                for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                    lhs += p.re * q.re + p.im * q.im;
                }
            }
        }
        for (p, q) in ax.highpass.as_slice().iter().zip(y.highpass.as_slice()) {
            lhs += p * q;
        }
        for (p, q) in ax.lowpass.as_slice().iter().zip(y.lowpass.as_slice()) {
            lhs += p * q;
        }
        let aty = adjoint(&y).unwrap();
        let rhs: f64 = x.as_slice().iter().zip(aty.as_slice()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
