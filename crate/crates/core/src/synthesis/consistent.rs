//! Turning sampled transformed vectors into synthesizable parameter sets.

use rand::Rng;

use super::soc::enforce_soc_per_scale;
use crate::analysis::{Analyzer, TextureParams};
use crate::error::Result;
use crate::gaussianize::{phi_full_inverse, reconstitute, TransformedVector};
use crate::grid::RealGrid;
use crate::layout::Group;

/// A complete parameter set built from a sample, with its provenance.
#[derive(Debug, Clone)]
pub struct ValidParams {
    /// Marginal from the sample, SOC and HOC baseline from the re-analysis,
    /// HOC shifted by the sampled deltas.
    pub params: TextureParams,
    /// Analysis of the per-scale SOC image.
    pub baseline: TextureParams,
    /// Sum of the per-scale SOC realizations.
    pub soc_image: RealGrid,
}

/// Three-step construction: realize the sampled SOC per scale, re-analyze
/// the summed image, then add the sampled HOC deltas to its baseline.
pub fn make_consistent<R: Rng + ?Sized>(
    raw: &TransformedVector,
    analyzer: &Analyzer,
    rng: &mut R,
) -> Result<ValidParams> {
    let sampled = phi_full_inverse(&raw.values, &raw.layout, raw.lambda)?;
    let soc = enforce_soc_per_scale(&sampled, analyzer.config(), rng)
        .map_err(|e| e.in_stage("per-scale SOC enforcement"))?;
    let baseline = analyzer
        .analyze(&soc.image)
        .map_err(|e| e.in_stage("re-analysis of the SOC image"))?;
    let params = reconstitute(raw, &baseline)?;
    params.validate()?;
    Ok(ValidParams {
        params,
        baseline,
        soc_image: soc.image,
    })
}

/// The same assembly but keeping the raw sampled SOC group instead of the
/// re-analyzed one.
pub fn naive_params(raw: &TransformedVector, consistent: &ValidParams) -> Result<TextureParams> {
    let sampled = phi_full_inverse(&raw.values, &raw.layout, raw.lambda)?;
    let mut p = consistent.params.clone();
    let soc = p.layout.group_range(Group::Soc);
    p.values[soc.clone()].copy_from_slice(&sampled.values[soc]);
    p.validate()?;
    Ok(p)
}
