use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Band, BlockKind, Family, Layout};
use crate::pyramid::PyramidConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub pyramid: PyramidConfig,
    /// Side of the autocovariance neighbourhood (odd).
    pub na: usize,
    /// Independent phase scrambles averaged into the baseline.
    pub n_scramble_repeats: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            pyramid: PyramidConfig::default(),
            na: 7,
            n_scramble_repeats: 4,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        if self.na % 2 == 0 {
            return Err(Error::InvalidConfig(format!("Na = {} must be odd", self.na)));
        }
        let coarsest = self.pyramid.band_size(self.pyramid.n_scales);
        if self.na > coarsest {
            return Err(Error::InvalidConfig(format!(
                "Na = {} exceeds the coarsest band size {coarsest}",
                self.na
            )));
        }
        if self.n_scramble_repeats == 0 {
            return Err(Error::InvalidConfig(
                "n_scramble_repeats must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.pyramid.n_scales, self.pyramid.n_orientations, self.na)
    }

    pub fn with_size(&self, image_size: usize) -> Self {
        AnalysisConfig {
            pyramid: self.pyramid.with_size(image_size),
            ..*self
        }
    }
}

/// Grouped texture statistics of one patch, stored flat against a
/// [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct TextureParams {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

/// Indices of `[mean, variance, skewness, kurtosis]` in the pixel block.
pub const MEAN: usize = 0;
pub const VARIANCE: usize = 1;
pub const SKEW: usize = 2;
pub const KURT: usize = 3;

impl TextureParams {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        layout.check_len(values.len())?;
        Ok(TextureParams { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, kind: BlockKind) -> &[f64] {
        &self.values[self.layout.range(kind)]
    }

    pub fn block_mut(&mut self, kind: BlockKind) -> &mut [f64] {
        let r = self.layout.range(kind);
        &mut self.values[r]
    }

    pub fn pixel_mean(&self) -> f64 {
        self.block(BlockKind::PixelMoments)[MEAN]
    }

    pub fn pixel_variance(&self) -> f64 {
        self.block(BlockKind::PixelMoments)[VARIANCE]
    }

    pub fn pixel_skewness(&self) -> f64 {
        self.block(BlockKind::PixelMoments)[SKEW]
    }

    pub fn pixel_kurtosis(&self) -> f64 {
        self.block(BlockKind::PixelMoments)[KURT]
    }

    /// Magnitude variance (autocovariance centre) of an oriented band.
    pub fn mag_variance(&self, scale: usize, orientation: usize) -> f64 {
        self.values[self.layout.mag_center(scale, orientation)]
    }

    /// Orientation covariance of `scale` as a full symmetric matrix.
    pub fn orient_matrix(&self, scale: usize) -> DMatrix<f64> {
        let k = self.layout.n_orientations;
        lower_to_matrix(self.block(BlockKind::OrientCov { scale }), k)
    }

    /// Values of the given coarse family concatenated in layout order.
    pub fn family(&self, family: Family) -> Vec<f64> {
        self.layout
            .blocks()
            .iter()
            .filter(|b| b.kind.group().family() == family)
            .flat_map(|b| self.values[b.range()].iter().copied())
            .collect()
    }

    /// Full validity audit: finiteness, positive variances, the kurtosis
    /// bound `kappa > s^2 + 1`, correlations inside `(-1, 1)`, and positive
    /// semidefinite orientation covariance matrices whose diagonals agree
    /// with the magnitude variances.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return bad(format!("non-finite value at index {i}"));
        }
        let l = &self.layout;
        let px = self.block(BlockKind::PixelMoments);
        if px[VARIANCE] <= 0.0 {
            return bad(format!("pixel variance {} not positive", px[VARIANCE]));
        }
        check_kurtosis("pixels", px[SKEW], px[KURT])?;
        for b in l.blocks() {
            let v = &self.values[b.range()];
            match b.kind {
                BlockKind::BandMoments(band) => check_kurtosis(&format!("{band:?}"), v[0], v[1])?,
                BlockKind::Autocov(_) | BlockKind::MagAutocov { .. } => {
                    let c = v[0];
                    if c <= 0.0 {
                        return bad(format!("{:?}: central variance {c} not positive", b.kind));
                    }
                    if let Some(x) = v[1..].iter().find(|x| x.abs() >= c) {
                        return bad(format!(
                            "{:?}: autocorrelation {} outside (-1, 1)",
                            b.kind,
                            x / c
                        ));
                    }
                }
                BlockKind::OrientCov { scale } => {
                    let m = self.orient_matrix(scale);
                    for k in 0..l.n_orientations {
                        let mv = self.mag_variance(scale, k);
                        if (m[(k, k)] - mv).abs() > 1e-9 * mv.abs() {
                            return bad(format!(
                                "orientation covariance diagonal {} disagrees with magnitude variance {mv}",
                                m[(k, k)]
                            ));
                        }
                    }
                    let eig = SymmetricEigen::new(m.clone());
                    let lmin = eig.eigenvalues.min();
                    let scale_ref = m.diagonal().max().max(f64::MIN_POSITIVE);
                    if lmin < -1e-10 * scale_ref {
                        return bad(format!(
                            "orientation covariance at scale {scale} is indefinite (min eigenvalue {lmin:e})"
                        ));
                    }
                }
                BlockKind::XscaleCov { scale } => {
                    let k = l.n_orientations;
                    for i in 0..k {
                        for j in 0..k {
                            let bound = (self.mag_variance(scale, i)
                                * self.mag_variance(scale + 1, j))
                            .sqrt();
                            if v[i * k + j].abs() >= bound {
                                return bad(format!(
                                    "cross-scale magnitude correlation outside (-1, 1) at scale {scale}"
                                ));
                            }
                        }
                    }
                }
                BlockKind::PhaseCorr { .. } | BlockKind::LowpassPhaseCorr => {
                    if let Some(x) = v.iter().find(|x| x.abs() >= 1.0) {
                        return bad(format!("{:?}: correlation {x} outside (-1, 1)", b.kind));
                    }
                }
                BlockKind::PixelMoments => {}
            }
        }
        Ok(())
    }

    /// Skewness and kurtosis of a partial reconstruction.
    pub fn band_moments(&self, band: Band) -> (f64, f64) {
        let v = self.block(BlockKind::BandMoments(band));
        (v[0], v[1])
    }
}

fn check_kurtosis(what: &str, s: f64, k: f64) -> Result<()> {
    if k - s * s - 1.0 <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "{what}: kurtosis {k} violates kappa > s^2 + 1 with s = {s}"
        )));
    }
    Ok(())
}

/// Expands a row-major lower triangle (diagonal included) into a symmetric
/// matrix.
pub fn lower_to_matrix(tri: &[f64], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in 0..=i {
            m[(i, j)] = tri[idx];
            m[(j, i)] = tri[idx];
            idx += 1;
        }
    }
    m
}

/// Row-major lower triangle (diagonal included) of a square matrix.
pub fn matrix_to_lower(m: &DMatrix<f64>) -> Vec<f64> {
    let k = m.nrows();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(AnalysisConfig::default().validate().is_ok());
        let mut c = AnalysisConfig::default();
        c.na = 9;
        assert!(c.validate().is_err());
        c.na = 6;
        assert!(c.validate().is_err());
        c.na = 7;
        c.n_scramble_repeats = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn triangle_round_trip() {
        let tri = [1.0, 0.5, 2.0, 0.1, 0.2, 3.0];
        let m = lower_to_matrix(&tri, 3);
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(matrix_to_lower(&m), tri.to_vec());
    }
}
