//! Gaussian Kullback-Leibler comparison of meta-models in the reference
//! eigenbasis, and normalized covariance images.

use std::io::Write;

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{pca, subspace_pca, Eigenbasis, Partition};
use crate::error::{Error, Result};
use crate::meta::{sorted_eigen, MetaModel};

/// Relative eigenvalue floor applied to both covariances.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// `KL(N(mu0, sigma0) || N(mu1, sigma1))` in nats. Computed in the
/// whitened frame of `sigma1`. The spectra of both covariances are floored
/// at `EIGEN_FLOOR` times the largest eigenvalue of `sigma1`, so equal
/// singular inputs still give zero.
pub fn gaussian_kld(
    mu0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    mu1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
) -> Result<f64> {
    let k = mu0.len();
    for (m, what) in [(sigma0, "first covariance"), (sigma1, "second covariance")] {
        if m.nrows() != k || m.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: format!("{k}x{k} {what}"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    if mu1.len() != k {
        return Err(Error::DimensionMismatch {
            expected: format!("second mean of length {k}"),
            got: mu1.len().to_string(),
        });
    }
    if k == 0 {
        return Ok(0.0);
    }
    let s1 = (sigma1 + sigma1.transpose()) * 0.5;
    let (v1, l1) = sorted_eigen(&s1);
    let top = l1[0];
    if top <= 0.0 || !top.is_finite() {
        return Err(Error::Numerical("second covariance is singular".into()));
    }
    let floor = EIGEN_FLOOR * top;
    let inv_sqrt = l1.map(|l| 1.0 / l.max(floor).sqrt());
    let w = DMatrix::from_diagonal(&inv_sqrt) * v1.transpose();
    let (v0, l0) = sorted_eigen(&((sigma0 + sigma0.transpose()) * 0.5));
    let s0 = if l0.iter().any(|&l| l < floor) {
        &v0 * DMatrix::from_diagonal(&l0.map(|l| l.max(floor))) * v0.transpose()
    } else {
        (sigma0 + sigma0.transpose()) * 0.5
    };
    let m = &w * s0 * w.transpose();
    let (_, x) = sorted_eigen(&((&m + m.transpose()) * 0.5));
    // x - ln x - 1 per whitened eigenvalue, each term non-negative
    let cov_term: f64 = x
        .iter()
        .map(|&x| {
            let x = x.max(f64::MIN_POSITIVE);
            x - x.ln() - 1.0
        })
        .sum();
    let d = &w * (mu1 - mu0);
    Ok(0.5 * (cov_term + d.norm_squared()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KldPoint {
    pub k: usize,
    pub kld: f64,
}

/// Divergence of a candidate from the reference as a function of the number
/// of reference eigenvectors projected onto.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldCurve {
    pub points: Vec<KldPoint>,
    /// The same curve with the candidate mean replaced by the reference mean.
    pub true_mean: Vec<KldPoint>,
}

impl KldCurve {
    /// `k,kld` rows, plus a `kld_true_mean` column when requested.
    pub fn write_csv(&self, mut w: impl Write, true_mean: bool) -> Result<()> {
        if true_mean {
            writeln!(w, "k,kld,kld_true_mean")?;
            for (a, b) in self.points.iter().zip(&self.true_mean) {
                writeln!(w, "{},{:.12e},{:.12e}", a.k, a.kld, b.kld)?;
            }
        } else {
            writeln!(w, "k,kld")?;
            for a in &self.points {
                writeln!(w, "{},{:.12e}", a.k, a.kld)?;
            }
        }
        Ok(())
    }
}

/// Which reference eigenbasis a comparison projects onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Full,
    Soc,
    Hoc,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<BasisKind> {
        match s {
            "full" => Ok(BasisKind::Full),
            "soc" => Ok(BasisKind::Soc),
            "hoc" => Ok(BasisKind::Hoc),
            other => Err(Error::InvalidConfig(format!(
                "basis `{other}` is not one of full, soc, hoc"
            ))),
        }
    }
}

/// The requested eigenbasis of a reference model.
pub fn reference_basis(reference: &MetaModel, kind: BasisKind) -> Result<Eigenbasis> {
    if kind == BasisKind::Full {
        return Ok(pca(reference));
    }
    let (soc, hoc) = subspace_pca(reference, &Partition::of(&reference.layout))?;
    Ok(if kind == BasisKind::Soc { soc } else { hoc })
}

/// Projects `(mu, sigma)` onto the first `k` basis vectors.
fn project(basis: &Eigenbasis, k: usize, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let u = basis.vectors.columns(0, k);
    (u.transpose() * mu, u.transpose() * sigma * u)
}

/// KLD of `candidate` from `reference` in the span of the first `k`
/// vectors of `basis`, for `k = 1..=k_max`.
pub fn kld_curve(reference: &MetaModel, candidate: &MetaModel, basis: &Eigenbasis, k_max: usize) -> Result<KldCurve> {
    if *reference.layout != *candidate.layout {
        return Err(Error::LayoutMismatch("reference and candidate layouts differ".into()));
    }
    if basis.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("basis of dimension {}", reference.dim()),
            got: basis.dim().to_string(),
        });
    }
    if k_max > basis.len() {
        return Err(Error::OutOfRange(format!(
            "k_max = {k_max} exceeds the {} basis vectors",
            basis.len()
        )));
    }
    let (r, c) = (&reference.gaussian, &candidate.gaussian);
    let pairs: Vec<(KldPoint, KldPoint)> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let (m0, s0) = project(basis, k, r.mean(), r.covariance());
            let (m1, s1) = project(basis, k, c.mean(), c.covariance());
            let full = gaussian_kld(&m0, &s0, &m1, &s1)?;
            let same = gaussian_kld(&m0, &s0, &m0, &s1)?;
            Ok((KldPoint { k, kld: full }, KldPoint { k, kld: same }))
        })
        .collect::<Result<Vec<_>>>()?;
    let (points, true_mean) = pairs.into_iter().unzip();
    Ok(KldCurve { points, true_mean })
}

/// `sigma_ij / sqrt(d_i d_j)` against a reference diagonal.
pub fn normalized_covariance_image(sigma: &DMatrix<f64>, ref_diag: &[f64]) -> Result<DMatrix<f64>> {
    let n = ref_diag.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} covariance"),
            got: format!("{}x{}", sigma.nrows(), sigma.ncols()),
        });
    }
    if let Some(i) = ref_diag.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidParams(format!(
            "reference variance {} at index {i} is not positive",
            ref_diag[i]
        )));
    }
    let s: Vec<f64> = ref_diag.iter().map(|d| d.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            sigma[(i, i)] / ref_diag[i]
        } else {
            sigma[(i, j)] / (s[i] * s[j])
        }
    }))
}

/// Signed heat map: blue for negative, white for zero, red for positive,
/// saturating at `limit` in magnitude.
pub fn render_heatmap(m: &DMatrix<f64>, limit: f64) -> RgbImage {
    let limit = if limit > 0.0 { limit } else { 1.0 };
    RgbImage::from_fn(m.ncols() as u32, m.nrows() as u32, |x, y| {
        let v = (m[(y as usize, x as usize)] / limit).clamp(-1.0, 1.0);
        let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
        if v >= 0.0 {
            Rgb([255, fade(v), fade(v)])
        } else {
            Rgb([fade(v), fade(v), 255])
        }
    })
}

/// Line plot of one or more series on shared axes.
pub fn render_curves(series: &[(&[KldPoint], [u8; 3])], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 24u32;
    let (pw, ph) = (width.saturating_sub(2 * margin).max(1), height.saturating_sub(2 * margin).max(1));
    let k_max = series.iter().flat_map(|s| s.0.iter().map(|p| p.k)).max().unwrap_or(1).max(1) as f64;
    let y_max = series
        .iter()
        .flat_map(|s| s.0.iter().map(|p| p.kld))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let axis = Rgb([0, 0, 0]);
    for x in margin..margin + pw {
        img.put_pixel(x, margin + ph - 1, axis);
    }
    for y in margin..margin + ph {
        img.put_pixel(margin, y, axis);
    }
    let to_px = |p: &KldPoint| -> (f64, f64) {
        (
            margin as f64 + (p.k as f64 / k_max) * (pw - 1) as f64,
            (margin + ph - 1) as f64 - (p.kld.max(0.0) / y_max) * (ph - 1) as f64,
        )
    };
    for (points, colour) in series {
        for w in points.windows(2) {
            let (a, b) = (to_px(&w[0]), to_px(&w[1]));
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                if x >= 0.0 && y >= 0.0 && (x as u32) < width && (y as u32) < height {
                    img.put_pixel(x as u32, y as u32, Rgb(*colour));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::AnalysisConfig;
    use crate::codec::pca;
    use crate::gaussianize::LAMBDA;
    use crate::meta::Gaussian;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    /// Textbook formula with explicit inverse and determinants.
    fn reference_kld(m0: &DVector<f64>, s0: &DMatrix<f64>, m1: &DVector<f64>, s1: &DMatrix<f64>) -> f64 {
        let k = m0.len() as f64;
        let inv = s1.clone().try_inverse().unwrap();
        let d = m1 - m0;
        0.5 * ((&inv * s0).trace() + (d.transpose() * &inv * &d)[0] - k + (s1.determinant() / s0.determinant()).ln())
    }

    #[test]
    fn identical_gaussians_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = spd(6, &mut rng);
        let m = DVector::from_fn(6, |_, _| rng.random::<f64>());
        assert!(gaussian_kld(&m, &s, &m, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn identical_singular_gaussians_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>() - 0.5);
        let s = &b * b.transpose();
        let m = DVector::from_fn(8, |_, _| rng.random::<f64>());
        assert!(gaussian_kld(&m, &s, &m, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn unit_mean_shift_is_half_nat() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = gaussian_kld(&DVector::from_element(1, 0.0), &one, &DVector::from_element(1, 1.0), &one).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_asymmetric() {
        let m0 = DVector::from_vec(vec![0.0, 0.0]);
        let m1 = DVector::from_vec(vec![1.0, -0.5]);
        let s0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let s1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.8]);
        let a = gaussian_kld(&m0, &s0, &m1, &s1).unwrap();
        let b = gaussian_kld(&m1, &s1, &m0, &s0).unwrap();
        assert!((a - reference_kld(&m0, &s0, &m1, &s1)).abs() < 1e-12);
        assert!((b - reference_kld(&m1, &s1, &m0, &s0)).abs() < 1e-12);
        assert!((a - b).abs() > 0.1);
    }

    #[test]
    fn normalization_of_own_diagonal_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = spd(5, &mut rng);
        let d: Vec<f64> = (0..5).map(|i| s[(i, i)]).collect();
        let n = normalized_covariance_image(&s, &d).unwrap();
        for i in 0..5 {
            assert_eq!(n[(i, i)], 1.0);
        }
        let diag = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
        assert_eq!(normalized_covariance_image(&diag, &d).unwrap(), DMatrix::identity(5, 5));
        assert!(normalized_covariance_image(&s, &[1.0, 1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn curve_properties() {
        let cfg = AnalysisConfig::default();
        let d = cfg.layout().unwrap().len();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = DMatrix::from_fn(d, 30, |_, _| rng.random::<f64>() - 0.5);
        let sigma = &b * b.transpose() + DMatrix::identity(d, d) * 0.01;
        let mu = DVector::from_fn(d, |_, _| rng.random::<f64>());
        let r = MetaModel::from_gaussian(Gaussian::new(mu.clone(), sigma.clone()).unwrap(), cfg, 1, LAMBDA).unwrap();
        let basis = pca(&r);
        let same = kld_curve(&r, &r, &basis, 40).unwrap();
        assert!(same.points.iter().all(|p| p.kld.abs() < 1e-9));
        let shifted = MetaModel::from_gaussian(
            Gaussian::new(mu.map(|v| v + 0.3), sigma * 1.5).unwrap(),
            cfg,
            1,
            LAMBDA,
        )
        .unwrap();
        let c = kld_curve(&r, &shifted, &basis, 40).unwrap();
        for (a, t) in c.points.iter().zip(&c.true_mean) {
            assert!(t.kld <= a.kld + 1e-12);
            assert!(t.kld >= -1e-9);
        }
        assert!(kld_curve(&r, &r, &basis, d + 1).is_err());
    }

    #[test]
    fn full_dimension_projection_matches_direct() {
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (s0, s1) = (spd(d, &mut rng), spd(d, &mut rng));
        let m0 = DVector::from_fn(d, |_, _| rng.random::<f64>());
        let m1 = DVector::from_fn(d, |_, _| rng.random::<f64>());
        let (v, l) = sorted_eigen(&s0);
        let basis = Eigenbasis { mean: m0.clone(), vectors: v, eigenvalues: l, support: None };
        let (pm0, ps0) = project(&basis, d, &m0, &s0);
        let (pm1, ps1) = project(&basis, d, &m1, &s1);
        let a = gaussian_kld(&pm0, &ps0, &pm1, &ps1).unwrap();
        let b = gaussian_kld(&m0, &s0, &m1, &s1).unwrap();
        assert!((a - b).abs() < 1e-6 * b.max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn kld_is_non_negative_and_matches_textbook(seed in 0u64..10_000, d in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s0, s1) = (spd(d, &mut rng), spd(d, &mut rng));
            let m0 = DVector::from_fn(d, |_, _| rng.random::<f64>());
            let m1 = DVector::from_fn(d, |_, _| rng.random::<f64>());
            let k = gaussian_kld(&m0, &s0, &m1, &s1).unwrap();
            prop_assert!(k >= -1e-9);
            let r = reference_kld(&m0, &s0, &m1, &s1);
            prop_assert!((k - r).abs() < 1e-8 * r.abs().max(1.0));
        }
    }
}
