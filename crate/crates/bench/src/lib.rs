//! Deterministic inputs shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use texsur_core::corpus::{scene, SceneKind};
use texsur_core::gaussianize::transform_patch;
use texsur_core::{AnalysisConfig, Analyzer, Gaussian, MetaModel, RealGrid, TransformedVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A textured square test image.
pub fn texture(n: usize, seed: u64) -> RealGrid {
    scene(SceneKind::DeadLeaves, n, &mut rng(seed))
}

/// Transformed vectors of `count` patches cut from one scene.
pub fn ensemble(count: usize, seed: u64) -> Vec<TransformedVector> {
    let analyzer = Analyzer::new(AnalysisConfig::default()).expect("default config");
    let img = texture(256, seed);
    let mut r = rng(seed);
    (0..count)
        .filter_map(|i| {
            let (x, y) = ((i * 37) % 192, (i * 53) % 192);
            transform_patch(&analyzer, &img.crop(x, y, 64).ok()?, &mut r).ok()
        })
        .collect()
}

/// A model fitted to [`ensemble`].
pub fn model(count: usize, seed: u64) -> MetaModel {
    MetaModel::fit(&ensemble(count, seed), AnalysisConfig::default()).expect("fit")
}

/// Mean and covariance of a random `d`-dimensional Gaussian.
pub fn gaussian(d: usize, seed: u64) -> Gaussian {
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    let mut r = rng(seed);
    let b = DMatrix::from_fn(d, d, |_, _| r.random::<f64>() - 0.5);
    let mu = DVector::from_fn(d, |_, _| r.random::<f64>());
    Gaussian::new(mu, &b * b.transpose() + DMatrix::identity(d, d)).expect("positive definite")
}
