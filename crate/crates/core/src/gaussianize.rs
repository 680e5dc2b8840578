//! Invertible re-parametrization of texture statistics onto an
//! unconstrained real vector.
//!
//! Every slot of the flat parameter vector is mapped according to its block:
//!
//! | block | transform |
//! |---|---|
//! | pixel mean | identity |
//! | variances, autocovariance centres | `log` |
//! | skewness | modulus transform |
//! | kurtosis | `log(kappa - s^2 - 1)` |
//! | autocovariance off-centre | `atanh(a / a0)` |
//! | orientation covariance | Cholesky entries of the correlation matrix |
//! | cross-scale covariance | `atanh` of the correlation |
//! | phase correlations | `atanh` |
//!
//! The inverse is total: any finite vector yields a parameter set that
//! passes [`TextureParams::validate`].

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use rand::Rng;

use crate::analysis::{baseline_into, lower_to_matrix, Analyzer, TextureParams, KURT, MEAN, SKEW, VARIANCE};
use crate::grid::RealGrid;
use crate::error::{Error, Result};
use crate::layout::{BlockKind, Family, Layout};

/// Default modulus-transform exponent.
pub const LAMBDA: f64 = 0.1;
/// Correlations are clipped to `[-1 + CORR_EPS, 1 - CORR_EPS]` before `atanh`.
pub const CORR_EPS: f64 = 1e-6;
/// Eigenvalue floor used when repairing indefinite correlation matrices.
pub const PSD_FLOOR: f64 = 1e-10;

// Bounds that keep every inverse finite and strictly inside its domain.
const MAX_ABS_CORR: f64 = 1.0 - 1e-12;
const MAX_LOG: f64 = 700.0;
const MAX_ABS_SKEW: f64 = 1e6;
const MIN_ROW_NORM: f64 = 1e-150;

/// Signed power transform `sign(y) ((|y| + 1)^lambda - 1) / lambda`,
/// `sign(y) log(|y| + 1)` at `lambda = 0`.
pub fn modulus_transform(y: f64, lambda: f64) -> f64 {
    let a = y.abs();
    let t = if lambda == 0.0 {
        a.ln_1p()
    } else {
        ((lambda * a.ln_1p()).exp_m1()) / lambda
    };
    t.copysign(y)
}

pub fn modulus_inverse(z: f64, lambda: f64) -> f64 {
    let a = z.abs();
    let y = if lambda == 0.0 {
        a.exp_m1()
    } else {
        let base = lambda * a;
        // (1 + lambda a)^(1/lambda) - 1
        (base.ln_1p() / lambda).exp_m1()
    };
    y.min(MAX_ABS_SKEW).copysign(z)
}

/// `log(kappa - s^2 - 1)`; requires the strict bound `kappa > s^2 + 1`.
pub fn transform_kurtosis(s: f64, kappa: f64) -> Result<f64> {
    let excess = kappa - s * s - 1.0;
    if excess <= 0.0 || !excess.is_finite() {
        return Err(Error::InvalidParams(format!(
            "kurtosis {kappa} violates kappa > s^2 + 1 with s = {s}"
        )));
    }
    Ok(excess.ln())
}

/// `exp(t) + s^2 + 1`, nudged upwards when rounding would reach the bound.
pub fn kurtosis_inverse(s: f64, t: f64) -> f64 {
    let floor = s * s + 1.0;
    let mut k = floor + t.clamp(-MAX_LOG, MAX_LOG).exp();
    while k - s * s - 1.0 <= 0.0 {
        k = f64::from_bits(k.to_bits() + 1);
    }
    k
}

/// `atanh` of a correlation clipped to `[-1 + CORR_EPS, 1 - CORR_EPS]`.
pub fn correlation_stretch(r: f64) -> f64 {
    r.clamp(-1.0 + CORR_EPS, 1.0 - CORR_EPS).atanh()
}

/// `tanh`, kept strictly inside `(-1, 1)`.
pub fn stretch_inverse(z: f64) -> f64 {
    z.tanh().clamp(-MAX_ABS_CORR, MAX_ABS_CORR)
}

fn log_positive(v: f64, what: &str) -> Result<f64> {
    if v <= 0.0 || !v.is_finite() {
        return Err(Error::InvalidParams(format!("{what} {v} is not positive")));
    }
    Ok(v.ln())
}

fn exp_bounded(t: f64) -> f64 {
    t.clamp(-MAX_LOG, MAX_LOG).exp()
}

/// Nearest correlation matrix with eigenvalues at least [`PSD_FLOOR`]:
/// symmetrize, clip the spectrum, restore the unit diagonal.
pub fn repair_psd(c: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (c + c.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for l in eig.eigenvalues.iter_mut() {
        *l = l.max(PSD_FLOOR);
    }
    normalize_diag(&eig.recompose())
}

fn normalize_diag(c: &DMatrix<f64>) -> DMatrix<f64> {
    let k = c.nrows();
    let d: Vec<f64> = (0..k).map(|i| c[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            c[(i, j)] / (d[i] * d[j])
        }
    })
}

/// Row-major lower-triangular entries of the Cholesky factor of a
/// correlation matrix. Matrices that are indefinite only by round-off are
/// repaired first; clearly indefinite input is an error.
pub fn corr_to_chol(c: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = c.nrows();
    if c.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    let sym = (c + c.transpose()) * 0.5;
    let l = match Cholesky::new(sym.clone()) {
        Some(ch) => ch.l(),
        None => {
            let lmin = SymmetricEigen::new(sym.clone()).eigenvalues.min();
            if lmin < -1e-8 {
                return Err(Error::InvalidParams(format!(
                    "correlation matrix is indefinite (min eigenvalue {lmin:e})"
                )));
            }
            Cholesky::new(repair_psd(&sym))
                .ok_or_else(|| Error::Numerical("Cholesky failed after PSD repair".into()))?
                .l()
        }
    };
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in 0..=i {
            out.push(l[(i, j)]);
        }
    }
    Ok(out)
}

/// `M M^T` from lower-triangular entries, renormalized to unit diagonal.
/// Rows of (near) zero norm are replaced by unit vectors, so every input
/// yields a valid correlation matrix.
pub fn chol_to_corr(entries: &[f64], k: usize) -> Result<DMatrix<f64>> {
    if entries.len() != k * (k + 1) / 2 {
        return Err(Error::DimensionMismatch {
            expected: format!("{} Cholesky entries", k * (k + 1) / 2),
            got: entries.len().to_string(),
        });
    }
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in 0..=i {
            m[(i, j)] = entries[idx];
            idx += 1;
        }
    }
    for i in 0..k {
        let norm = m.row(i).norm();
        if !(norm > MIN_ROW_NORM) || !norm.is_finite() {
            m.row_mut(i).fill(0.0);
            m[(i, i)] = 1.0;
        } else {
            let r = m.row(i) / norm;
            m.row_mut(i).copy_from(&r);
        }
    }
    let c = &m * m.transpose();
    let mut out = normalize_diag(&c);
    for i in 0..k {
        for j in 0..i {
            let v = out[(i, j)].clamp(-1.0, 1.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::InvalidParams(format!("non-finite value at index {i}"))),
        None => Ok(()),
    }
}

/// Slot-wise transform of a complete parameter vector.
pub fn phi_full(p: &TextureParams, lambda: f64) -> Result<Vec<f64>> {
    check_finite(&p.values)?;
    let layout = &p.layout;
    let k = layout.n_orientations;
    let mut out = vec![0.0; p.len()];
    for b in layout.blocks() {
        let v = &p.values[b.range()];
        let o = &mut out[b.range()];
        match b.kind {
            BlockKind::PixelMoments => {
                o[MEAN] = v[MEAN];
                o[VARIANCE] = log_positive(v[VARIANCE], "pixel variance")?;
                o[SKEW] = modulus_transform(v[SKEW], lambda);
                o[KURT] = transform_kurtosis(v[SKEW], v[KURT])?;
            }
            BlockKind::BandMoments(_) => {
                o[0] = modulus_transform(v[0], lambda);
                o[1] = transform_kurtosis(v[0], v[1])?;
            }
            BlockKind::Autocov(_) | BlockKind::MagAutocov { .. } => {
                let c0 = v[0];
                o[0] = log_positive(c0, "central variance")?;
                for (oi, vi) in o[1..].iter_mut().zip(&v[1..]) {
                    *oi = correlation_stretch(vi / c0);
                }
            }
            BlockKind::OrientCov { scale } => {
                let cov = lower_to_matrix(v, k);
                let d: Vec<f64> = (0..k).map(|i| p.mag_variance(scale, i)).collect();
                if let Some(x) = d.iter().find(|x| **x <= 0.0) {
                    return Err(Error::InvalidParams(format!(
                        "magnitude variance {x} not positive"
                    )));
                }
                let c = DMatrix::from_fn(k, k, |i, j| {
                    if i == j {
                        1.0
                    } else {
                        cov[(i, j)] / (d[i] * d[j]).sqrt()
                    }
                });
                o.copy_from_slice(&corr_to_chol(&c)?);
            }
            BlockKind::XscaleCov { scale } => {
                for i in 0..k {
                    for j in 0..k {
                        let bound =
                            (p.mag_variance(scale, i) * p.mag_variance(scale + 1, j)).sqrt();
                        if !(bound > 0.0) {
                            return Err(Error::InvalidParams(
                                "zero magnitude variance in cross-scale covariance".into(),
                            ));
                        }
                        o[i * k + j] = correlation_stretch(v[i * k + j] / bound);
                    }
                }
            }
            BlockKind::PhaseCorr { .. } | BlockKind::LowpassPhaseCorr => {
                for (oi, vi) in o.iter_mut().zip(v) {
                    *oi = correlation_stretch(*vi);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`phi_full`]; defined for every finite vector.
pub fn phi_full_inverse(v: &[f64], layout: &Arc<Layout>, lambda: f64) -> Result<TextureParams> {
    layout.check_len(v.len())?;
    check_finite(v)?;
    let k = layout.n_orientations;
    let mut p = TextureParams::new(vec![0.0; v.len()], layout.clone())?;
    // blocks are ordered so magnitude variances precede their users
    for b in layout.blocks() {
        let t = &v[b.range()];
        match b.kind {
            BlockKind::PixelMoments => {
                let s = modulus_inverse(t[SKEW], lambda);
                let o = p.block_mut(b.kind);
                o[MEAN] = t[MEAN];
                o[VARIANCE] = exp_bounded(t[VARIANCE]);
                o[SKEW] = s;
                o[KURT] = kurtosis_inverse(s, t[KURT]);
            }
            BlockKind::BandMoments(_) => {
                let s = modulus_inverse(t[0], lambda);
                let o = p.block_mut(b.kind);
                o[0] = s;
                o[1] = kurtosis_inverse(s, t[1]);
            }
            BlockKind::Autocov(_) | BlockKind::MagAutocov { .. } => {
                let c0 = exp_bounded(t[0]);
                let o = p.block_mut(b.kind);
                o[0] = c0;
                for (oi, ti) in o[1..].iter_mut().zip(&t[1..]) {
                    *oi = stretch_inverse(*ti) * c0;
                }
            }
            BlockKind::OrientCov { scale } => {
                let c = chol_to_corr(t, k)?;
                let d: Vec<f64> = (0..k).map(|i| p.mag_variance(scale, i)).collect();
                let o = p.block_mut(b.kind);
                let mut idx = 0;
                for i in 0..k {
                    for j in 0..=i {
                        o[idx] = if i == j {
                            d[i]
                        } else {
                            c[(i, j)] * (d[i] * d[j]).sqrt()
                        };
                        idx += 1;
                    }
                }
            }
            BlockKind::XscaleCov { scale } => {
                let bounds: Vec<f64> = (0..k * k)
                    .map(|ij| {
                        (p.mag_variance(scale, ij / k) * p.mag_variance(scale + 1, ij % k)).sqrt()
                    })
                    .collect();
                let o = p.block_mut(b.kind);
                for ((oi, ti), bound) in o.iter_mut().zip(t).zip(bounds) {
                    *oi = stretch_inverse(*ti) * bound;
                }
            }
            BlockKind::PhaseCorr { .. } | BlockKind::LowpassPhaseCorr => {
                let o = p.block_mut(b.kind);
                for (oi, ti) in o.iter_mut().zip(t) {
                    *oi = stretch_inverse(*ti);
                }
            }
        }
    }
    Ok(p)
}

/// Texture statistics with HOC groups expressed relative to a baseline:
/// marginal and SOC slots hold native values, HOC slots hold
/// `phi(original) - phi(baseline)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

impl NetParams {
    /// Marginal and SOC slots as a native parameter view.
    pub fn native_part(&self) -> &[f64] {
        &self.values[..self.layout.hoc_range().start]
    }

    pub fn hoc_delta(&self) -> &[f64] {
        &self.values[self.layout.hoc_range()]
    }

    /// Audits marginal and SOC groups; HOC deltas only need to be finite.
    pub fn validate(&self) -> Result<()> {
        check_finite(&self.values)?;
        let hoc = self.layout.hoc_range();
        // borrow a full vector whose HOC part is a trivially valid filler
        let filler = phi_full_inverse(&vec![0.0; self.layout.len()], &self.layout, LAMBDA)?;
        let mut v = filler.values;
        v[..hoc.start].copy_from_slice(self.native_part());
        TextureParams::new(v, self.layout.clone())?.validate()
    }
}

/// A vector in the unconstrained space the meta-model lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedVector {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
    pub lambda: f64,
}

impl TransformedVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>, lambda: f64) -> Result<Self> {
        layout.check_len(values.len())?;
        Ok(TransformedVector {
            values,
            layout,
            lambda,
        })
    }

    pub fn family(&self, family: Family) -> Vec<f64> {
        self.layout
            .blocks()
            .iter()
            .filter(|b| b.kind.group().family() == family)
            .flat_map(|b| self.values[b.range()].iter().copied())
            .collect()
    }
}

/// Net statistics of a patch given its baseline: HOC slots become
/// differences of transformed values.
pub fn net_params(original: &TextureParams, baseline: &TextureParams) -> Result<NetParams> {
    if original.layout != baseline.layout {
        return Err(Error::LayoutMismatch(
            "original and baseline use different layouts".into(),
        ));
    }
    let fo = phi_full(original, LAMBDA)?;
    let fb = phi_full(baseline, LAMBDA)?;
    let hoc = original.layout.hoc_range();
    let mut values = original.values.clone();
    for i in hoc {
        values[i] = fo[i] - fb[i];
    }
    Ok(NetParams {
        values,
        layout: original.layout.clone(),
    })
}

/// Transforms the native marginal and SOC slots; HOC deltas pass through.
pub fn phi(net: &NetParams, lambda: f64) -> Result<TransformedVector> {
    net.validate()?;
    let hoc = net.layout.hoc_range();
    let filler = phi_full_inverse(&vec![0.0; net.layout.len()], &net.layout, lambda)?;
    let mut full = filler;
    full.values[..hoc.start].copy_from_slice(net.native_part());
    let mut v = phi_full(&full, lambda)?;
    v[hoc.clone()].copy_from_slice(net.hoc_delta());
    TransformedVector::new(v, net.layout.clone(), lambda)
}

/// Analysis, scrambled baseline, net statistics and transform of one patch.
pub fn transform_patch<R: Rng + ?Sized>(
    analyzer: &Analyzer,
    patch: &RealGrid,
    rng: &mut R,
) -> Result<TransformedVector> {
    let original = analyzer.analyze(patch)?;
    let mut baseline = original.clone();
    baseline_into(analyzer, patch, rng, &mut baseline)?;
    phi(&net_params(&original, &baseline)?, LAMBDA)
}

/// Inverse of [`phi`]; total on finite vectors.
pub fn phi_inverse(v: &TransformedVector) -> Result<NetParams> {
    let full = phi_full_inverse(&v.values, &v.layout, v.lambda)?;
    let hoc = v.layout.hoc_range();
    let mut values = full.values;
    values[hoc.clone()].copy_from_slice(&v.values[hoc]);
    Ok(NetParams {
        values,
        layout: v.layout.clone(),
    })
}

/// Assembles a complete parameter vector from a sampled transformed vector
/// and a baseline analysis `f0`: marginal statistics from the sample, SOC
/// from `f0`, HOC as `phi^-1(phi(HOC of f0) + delta)`.
pub fn reconstitute(sample: &TransformedVector, f0: &TextureParams) -> Result<TextureParams> {
    if sample.layout != f0.layout {
        return Err(Error::LayoutMismatch(
            "sample and baseline use different layouts".into(),
        ));
    }
    check_finite(&sample.values)?;
    let layout = &sample.layout;
    let marg = layout.group_range(crate::layout::Group::Marginal);
    let hoc = layout.hoc_range();
    let mut t = phi_full(f0, sample.lambda)?;
    t[marg.clone()].copy_from_slice(&sample.values[marg]);
    for i in hoc.clone() {
        t[i] += sample.values[i];
    }
    let mut out = phi_full_inverse(&t, layout, sample.lambda)?;
    // Slots whose inputs are unchanged are carried over exactly instead of
    // through a transform round trip.
    let soc = layout.group_range(crate::layout::Group::Soc);
    out.values[soc.clone()].copy_from_slice(&f0.values[soc]);
    let delta = &sample.values;
    let unchanged = |r: std::ops::Range<usize>| delta[r].iter().all(|&d| d == 0.0);
    let k = layout.n_orientations;
    let mut center_kept = vec![vec![false; k]; layout.n_scales + 1];
    for b in layout.blocks() {
        let r = b.range();
        match b.kind {
            BlockKind::MagAutocov { scale, orientation } => {
                if delta[r.start] == 0.0 {
                    center_kept[scale][orientation] = true;
                    for i in r.filter(|&i| i == b.offset || delta[i] == 0.0) {
                        out.values[i] = f0.values[i];
                    }
                }
            }
            BlockKind::OrientCov { scale } => {
                if unchanged(r.clone()) && center_kept[scale].iter().all(|&c| c) {
                    out.values[r.clone()].copy_from_slice(&f0.values[r]);
                }
            }
            BlockKind::XscaleCov { scale } => {
                for i in 0..k {
                    for j in 0..k {
                        let idx = b.offset + i * k + j;
                        if delta[idx] == 0.0 && center_kept[scale][i] && center_kept[scale + 1][j] {
                            out.values[idx] = f0.values[idx];
                        }
                    }
                }
            }
            BlockKind::PhaseCorr { .. } | BlockKind::LowpassPhaseCorr => {
                for i in r.filter(|&i| delta[i] == 0.0) {
                    out.values[i] = f0.values[i];
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn modulus_fixed_values() {
        assert_eq!(modulus_transform(0.0, LAMBDA), 0.0);
        assert!((modulus_transform(std::f64::consts::E - 1.0, 0.0) - 1.0).abs() < 1e-15);
        // (2^0.1 - 1) / 0.1
        assert!((modulus_transform(1.0, 0.1) - 0.717_734_625_362_931_6).abs() < 1e-14);
        assert!((modulus_transform(-1.0, 0.1) + 0.717_734_625_362_931_6).abs() < 1e-14);
    }

    #[test]
    fn kurtosis_fixed_values() {
        assert!((transform_kurtosis(0.0, 3.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kurtosis_inverse(1.0, 0.0), 3.0);
        assert!(transform_kurtosis(1.0, 2.0).is_err());
        let k = kurtosis_inverse(3.0, -1e6);
        assert!(k - 9.0 - 1.0 > 0.0);
    }

    #[test]
    fn kurtosis_round_trip_grid() {
        for i in 0..=60 {
            let s = -3.0 + 0.1 * i as f64;
            for j in 0..=80 {
                let excess = 1e-6 * 10f64.powf(j as f64 * 8.0 / 80.0);
                let kappa = excess + s * s + 1.0;
                let back = kurtosis_inverse(s, transform_kurtosis(s, kappa).unwrap());
                assert!((back - kappa).abs() < 1e-12 * kappa.max(1.0), "{s} {kappa} {back}");
            }
        }
    }

    #[test]
    fn stretch_round_trip_grid() {
        for i in 0..=1998 {
            let r = -0.999 + 0.001 * i as f64;
            assert!((stretch_inverse(correlation_stretch(r)) - r).abs() < 1e-9);
        }
        assert_eq!(correlation_stretch(0.0), 0.0);
        assert!(stretch_inverse(1e300) < 1.0);
    }

    #[test]
    fn identity_cholesky() {
        let i = DMatrix::<f64>::identity(4, 4);
        let e = corr_to_chol(&i).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(chol_to_corr(&e, 4).unwrap(), i);
    }

    #[test]
    fn indefinite_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(corr_to_chol(&c).is_err());
    }

    #[test]
    fn zero_entries_give_identity() {
        let c = chol_to_corr(&[0.0; 6], 3).unwrap();
        assert_eq!(c, DMatrix::identity(3, 3));
    }

    proptest! {
        #[test]
        fn modulus_round_trip(y in -1e4f64..1e4, lambda in 0.0f64..1.0) {
            let back = modulus_inverse(modulus_transform(y, lambda), lambda);
            prop_assert!((back - y).abs() <= 1e-9 * y.abs().max(1.0));
        }

        #[test]
        fn modulus_is_monotone(a in -100.0f64..100.0, d in 1e-6f64..10.0) {
            prop_assert!(modulus_transform(a + d, LAMBDA) > modulus_transform(a, LAMBDA));
        }

        #[test]
        fn chol_output_is_psd(entries in proptest::collection::vec(-5.0f64..5.0, 10)) {
            let c = chol_to_corr(&entries, 4).unwrap();
            let lmin = SymmetricEigen::new(c.clone()).eigenvalues.min();
            prop_assert!(lmin >= -1e-10);
            for i in 0..4 {
                prop_assert_eq!(c[(i, i)], 1.0);
            }
        }

        #[test]
        fn corr_round_trip(entries in proptest::collection::vec(-2.0f64..2.0, 10)) {
            // a well-conditioned correlation matrix from random factors
            let mut e = entries.clone();
            for (i, d) in [0usize, 2, 5, 9].iter().enumerate() {
                e[*d] = 1.0 + i as f64 * 0.0 + e[*d].abs();
            }
            let c = chol_to_corr(&e, 4).unwrap();
            let back = chol_to_corr(&corr_to_chol(&c).unwrap(), 4).unwrap();
            prop_assert!((back - c).norm() < 1e-9);
        }
    }
}
