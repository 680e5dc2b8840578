//! Spectral homogeneity of a patch across its four quadrants.

use crate::error::{Error, Result};
use crate::fft::power_spectrum;
use crate::grid::RealGrid;

/// Bins below this fraction of the mean per-bin power are floored.
pub const SPECTRAL_FLOOR: f64 = 1e-12;

/// Inhomogeneity `h >= 0` of a patch: the summed log ratio between the
/// quadrant-averaged power spectrum and each quadrant's power spectrum.
/// Zero for a patch tiled from four identical quadrants; invariant under
/// intensity scaling.
pub fn homogeneity(patch: &RealGrid) -> Result<f64> {
    patch.ensure_finite("patch")?;
    let n = patch.width();
    if !patch.is_square() || n < 2 || n % 2 != 0 {
        return Err(Error::DimensionMismatch {
            expected: "square patch with even side".into(),
            got: format!("{}x{}", patch.width(), patch.height()),
        });
    }
    let h = n / 2;
    let spectra: Vec<RealGrid> = [(0, 0), (h, 0), (0, h), (h, h)]
        .iter()
        .map(|&(x, y)| patch.crop(x, y, h).map(|q| power_spectrum(&q)))
        .collect::<Result<_>>()?;
    let bins = h * h;
    let total: f64 = spectra.iter().flat_map(|s| s.as_slice()).sum();
    if total <= 0.0 {
        return Err(Error::DegeneratePatch {
            variance: 0.0,
            floor: 0.0,
        });
    }
    let eps = SPECTRAL_FLOOR * total / (4 * bins) as f64;
    let mut acc = 0.0;
    for i in 0..bins {
        let p: [f64; 4] = std::array::from_fn(|j| spectra[j].as_slice()[i].max(eps));
        // pairwise sum keeps identical quadrants exact
        let mean = ((p[0] + p[1]) + (p[2] + p[3])) / 4.0;
        acc += p.iter().map(|&pj| (mean / pj).ln()).sum::<f64>();
    }
    Ok(acc.max(0.0))
}
