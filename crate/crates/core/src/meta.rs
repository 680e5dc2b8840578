//! Multivariate Gaussian meta-model over transformed texture vectors.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::analysis::{AnalysisConfig, Analyzer};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::gaussianize::{TransformedVector, LAMBDA};
use crate::grid::RealGrid;
use crate::layout::Layout;
use crate::synthesis::{make_consistent, synthesize, SynthesisConfig, SynthesisReport, ValidParams};

/// Generator every command-line entry point seeds; recorded in artifacts.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng";

const MSM_MAGIC: &[u8; 4] = b"TMSM";
const MSM_VERSION: u32 = 1;

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// A Gaussian with its eigendecomposition, eigenvalues descending and
/// clipped at zero.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    root: DMatrix<f64>,
}

impl Gaussian {
    /// Symmetrizes `sigma` and diagonalizes it.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Gaussian> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: format!("{d}x{d} covariance"),
                got: format!("{}x{}", sigma.nrows(), sigma.ncols()),
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian moments"));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let (vectors, values) = sorted_eigen(&sigma);
        let mut root = vectors.clone();
        for (j, &l) in values.iter().enumerate() {
            root.column_mut(j).scale_mut(l.sqrt());
        }
        Ok(Gaussian {
            mu,
            sigma,
            vectors,
            values,
            root,
        })
    }

    /// Maximum-likelihood fit: mean, then divide-by-N covariance, both with
    /// compensated sums in a canonical (sorted) sample order.
    pub fn fit(data: &[Vec<f64>]) -> Result<Gaussian> {
        if data.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a covariance needs at least 2 vectors, got {}",
                data.len()
            )));
        }
        let d = data[0].len();
        if let Some(v) = data.iter().find(|v| v.len() != d) {
            return Err(Error::LayoutMismatch(format!(
                "ensemble mixes vector lengths {d} and {}",
                v.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble"));
        }
        let mut order: Vec<&Vec<f64>> = data.iter().collect();
        order.sort_by(|a, b| lex_cmp(a, b));
        let n = order.len() as f64;

        let mut acc = vec![Compensated::default(); d];
        for v in &order {
            for (a, &x) in acc.iter_mut().zip(v.iter()) {
                a.add(x);
            }
        }
        let mu: Vec<f64> = acc.iter().map(|a| a.value() / n).collect();

        let mut cov = vec![Compensated::default(); d * (d + 1) / 2];
        let mut centred = vec![0.0; d];
        for v in &order {
            for i in 0..d {
                centred[i] = v[i] - mu[i];
            }
            let mut k = 0;
            for i in 0..d {
                let ci = centred[i];
                for &cj in &centred[i..] {
                    cov[k].add(ci * cj);
                    k += 1;
                }
            }
        }
        let mut sigma = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in i..d {
                let s = cov[k].value() / n;
                sigma[(i, j)] = s;
                sigma[(j, i)] = s;
                k += 1;
            }
        }
        Gaussian::new(DVector::from_vec(mu), sigma)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Orthonormal eigenvectors as columns, matching [`Gaussian::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    /// The root `U sqrt(D)` of the covariance.
    pub fn root(&self) -> &DMatrix<f64> {
        &self.root
    }

    /// `U sqrt(D) x + mu`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} latent coordinates", self.dim()),
                got: x.len().to_string(),
            });
        }
        let x = DVector::from_column_slice(x);
        Ok((&self.root * x + &self.mu).as_slice().to_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
                self.transform(&x).expect("latent length matches")
            })
            .collect()
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Eigenpairs of a symmetric matrix, descending, negative values clipped to
/// zero, each vector signed so its largest-magnitude entry is positive.
pub(crate) fn sorted_eigen(sym: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let d = sym.nrows();
    if d == 0 {
        return (DMatrix::zeros(0, 0), DVector::zeros(0));
    }
    let eig = SymmetricEigen::new(sym.clone());
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = DMatrix::zeros(d, d);
    let mut values = DVector::zeros(d);
    for (j, &i) in idx.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let peak = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if peak < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(j, &col);
        values[j] = eig.eigenvalues[i].max(0.0);
    }
    (vectors, values)
}

/// The fitted meta-model: a Gaussian over transformed vectors plus the
/// analysis settings that produced them.
#[derive(Debug, Clone)]
pub struct MetaModel {
    pub gaussian: Gaussian,
    pub layout: Arc<Layout>,
    pub analysis_config: AnalysisConfig,
    pub n_train: usize,
    pub lambda: f64,
}

impl MetaModel {
    /// Fits the Gaussian to an ensemble of transformed vectors.
    pub fn fit(ensemble: &[TransformedVector], analysis_config: AnalysisConfig) -> Result<MetaModel> {
        let layout = Arc::new(analysis_config.layout()?);
        for v in ensemble {
            if *v.layout != *layout {
                return Err(Error::LayoutMismatch(
                    "ensemble vector does not match the analysis layout".into(),
                ));
            }
            if v.lambda != ensemble[0].lambda {
                return Err(Error::InvalidConfig("ensemble mixes modulus parameters".into()));
            }
        }
        let data: Vec<Vec<f64>> = ensemble.iter().map(|v| v.values.clone()).collect();
        let gaussian = Gaussian::fit(&data)?;
        let d = layout.len();
        let recommended = d * (d + 1) / 2;
        if data.len() < recommended {
            log::warn!(
                "fitting a {d}-dimensional covariance from {} vectors; about {recommended} are recommended",
                data.len()
            );
        }
        Ok(MetaModel {
            gaussian,
            layout,
            analysis_config,
            n_train: data.len(),
            lambda: ensemble.first().map_or(LAMBDA, |v| v.lambda),
        })
    }

    pub fn from_gaussian(
        gaussian: Gaussian,
        analysis_config: AnalysisConfig,
        n_train: usize,
        lambda: f64,
    ) -> Result<MetaModel> {
        let layout = Arc::new(analysis_config.layout()?);
        layout.check_len(gaussian.dim())?;
        Ok(MetaModel {
            gaussian,
            layout,
            analysis_config,
            n_train,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.gaussian.dim()
    }

    /// The vector for latent coordinates `x`.
    pub fn sample_at(&self, x: &[f64]) -> Result<TransformedVector> {
        TransformedVector::new(self.gaussian.transform(x)?, self.layout.clone(), self.lambda)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<TransformedVector> {
        self.gaussian
            .sample(rng, n)
            .into_iter()
            .map(|v| TransformedVector {
                values: v,
                layout: self.layout.clone(),
                lambda: self.lambda,
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(MSM_MAGIC, MSM_VERSION);
        w.bytes(&serde_json::to_vec(&self.analysis_config)?);
        w.bytes(&self.layout.encode_blocks());
        w.f64(self.lambda);
        w.u64(self.n_train as u64);
        w.u64(self.dim() as u64);
        w.f64s(self.gaussian.mean().as_slice());
        w.f64s(self.gaussian.covariance().as_slice());
        Ok(w.buf)
    }

    /// Parses a model; the eigendecomposition is recomputed.
    pub fn from_bytes(data: &[u8]) -> Result<MetaModel> {
        let (mut r, version) = Reader::open(data, MSM_MAGIC, "model file")?;
        if version != MSM_VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let config: AnalysisConfig = serde_json::from_slice(r.bytes()?)?;
        config.validate()?;
        let layout = config.layout()?;
        layout.verify_blocks(r.bytes()?)?;
        let lambda = r.f64()?;
        let n_train = r.u64()? as usize;
        let d = r.count(8)?;
        layout.check_len(d)?;
        let mu = DVector::from_vec(r.f64s(d)?);
        let sigma = DMatrix::from_vec(d, d, r.f64s(d * d)?);
        r.finish()?;
        MetaModel::from_gaussian(Gaussian::new(mu, sigma)?, config, n_train, lambda)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MetaModel> {
        MetaModel::from_bytes(&std::fs::read(path)?)
    }
}

/// A synthesized surrogate texture with the parameters it was built from.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub image: RealGrid,
    pub params: ValidParams,
    pub report: SynthesisReport,
}

/// Samples a vector, makes it consistent and synthesizes it.
pub fn draw_texture<R: Rng + ?Sized>(
    model: &MetaModel,
    rng: &mut R,
    config: &SynthesisConfig,
) -> Result<Surrogate> {
    let raw = model.sample(rng, 1).pop().expect("one sample");
    let analyzer = Analyzer::new(model.analysis_config)?;
    texture_from_vector(&raw, &analyzer, rng, config)
}

/// Consistency construction plus synthesis for a given transformed vector.
pub fn texture_from_vector<R: Rng + ?Sized>(
    raw: &TransformedVector,
    analyzer: &Analyzer,
    rng: &mut R,
    config: &SynthesisConfig,
) -> Result<Surrogate> {
    let params = make_consistent(raw, analyzer, rng)?;
    let s = synthesize(&params.params, analyzer.config(), config, rng)?;
    Ok(Surrogate {
        image: s.image,
        params,
        report: s.report,
    })
}
