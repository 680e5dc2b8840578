use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Group, Layout};
use crate::meta::{sorted_eigen, MetaModel};

/// Index ranges of the two subspaces diagonalized separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub soc: Range<usize>,
    pub hoc: Range<usize>,
}

impl Partition {
    /// SOC group versus all HOC groups of a layout.
    pub fn of(layout: &Layout) -> Partition {
        Partition {
            soc: layout.group_range(Group::Soc),
            hoc: layout.hoc_range(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let ok = |r: &Range<usize>| r.start < r.end && r.end <= dim;
        let disjoint = self.soc.end <= self.hoc.start || self.hoc.end <= self.soc.start;
        if !ok(&self.soc) || !ok(&self.hoc) || !disjoint {
            return Err(Error::InvalidConfig(format!(
                "partition {:?} / {:?} is not two disjoint non-empty ranges within {dim}",
                self.soc, self.hoc
            )));
        }
        Ok(())
    }
}

/// Orthonormal principal directions of a model, eigenvalues descending.
/// Vectors are columns in the full parameter space; a subspace basis is
/// zero outside its index range.
#[derive(Debug, Clone)]
pub struct Eigenbasis {
    pub mean: DVector<f64>,
    pub vectors: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    /// Index range the basis spans, for subspace bases.
    pub support: Option<Range<usize>>,
}

impl Eigenbasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of basis vectors.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Fraction of the total variance captured by the first `k` components,
    /// for `k = 0..=len`.
    pub fn cumulative_variance(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for &l in self.eigenvalues.iter() {
            acc += l;
            out.push(if total > 0.0 { acc / total } else { 1.0 });
        }
        if let Some(last) = out.last_mut() {
            *last = 1.0;
        }
        out
    }

    /// Smallest `k` whose cumulative variance reaches `fraction`.
    pub fn components_for(&self, fraction: f64) -> usize {
        self.cumulative_variance()
            .iter()
            .position(|&c| c >= fraction)
            .unwrap_or(self.len())
    }

    /// Coordinates of `v - mean` along the first `k` components.
    pub fn project(&self, v: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check(v, k)?;
        let c = DVector::from_column_slice(v) - &self.mean;
        Ok((self.vectors.columns(0, k).transpose() * c).as_slice().to_vec())
    }

    /// `mean + sum_i coeffs[i] u_i`.
    pub fn back_project(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() > self.len() {
            return Err(Error::OutOfRange(format!(
                "{} coefficients for {} components",
                coeffs.len(),
                self.len()
            )));
        }
        let c = DVector::from_column_slice(coeffs);
        Ok((&self.mean + self.vectors.columns(0, coeffs.len()) * c)
            .as_slice()
            .to_vec())
    }

    fn check(&self, v: &[f64], k: usize) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("vector of length {}", self.dim()),
                got: v.len().to_string(),
            });
        }
        if k > self.len() {
            return Err(Error::OutOfRange(format!(
                "k = {k} exceeds the {} available components",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Full eigendecomposition of the model covariance.
pub fn pca(model: &MetaModel) -> Eigenbasis {
    let g = &model.gaussian;
    Eigenbasis {
        mean: g.mean().clone(),
        vectors: g.eigenvectors().clone(),
        eigenvalues: g.eigenvalues().clone(),
        support: None,
    }
}

fn block_basis(mean: &DVector<f64>, sigma: &DMatrix<f64>, r: Range<usize>) -> Eigenbasis {
    let d = mean.len();
    let n = r.len();
    let block = sigma.view((r.start, r.start), (n, n)).into_owned();
    let (v, l) = sorted_eigen(&block);
    let mut vectors = DMatrix::zeros(d, n);
    vectors.view_mut((r.start, 0), (n, n)).copy_from(&v);
    Eigenbasis {
        mean: mean.clone(),
        vectors,
        eigenvalues: l,
        support: Some(r),
    }
}

/// Separate eigendecompositions of the two diagonal blocks.
pub fn subspace_pca(model: &MetaModel, partition: &Partition) -> Result<(Eigenbasis, Eigenbasis)> {
    partition.validate(model.dim())?;
    let g = &model.gaussian;
    Ok((
        block_basis(g.mean(), g.covariance(), partition.soc.clone()),
        block_basis(g.mean(), g.covariance(), partition.hoc.clone()),
    ))
}

/// Drops all components beyond the first `k`: the centred vector loses its
/// projection onto components `k..`, everything else is kept.
pub fn reduce(v: &[f64], basis: &Eigenbasis, k: usize) -> Result<Vec<f64>> {
    basis.check(v, k)?;
    let c = DVector::from_column_slice(v) - &basis.mean;
    let tail = basis.vectors.columns(k, basis.len() - k);
    let coeffs = tail.transpose() * &c;
    let kept = c - tail * coeffs;
    Ok((kept + &basis.mean).as_slice().to_vec())
}
