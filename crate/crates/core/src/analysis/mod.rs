//! Texture statistics: the analysis operator, its parameter container and
//! helpers built on top of it.

mod analyzer;
mod homogeneity;
mod params;
mod scramble;
pub mod stats;

pub use analyzer::{analyze, Analyzer, Trace, VARIANCE_FLOOR};
pub use params::{
    lower_to_matrix, matrix_to_lower, AnalysisConfig, TextureParams, KURT, MEAN, SKEW, VARIANCE,
};
pub use homogeneity::{homogeneity, SPECTRAL_FLOOR};
pub use scramble::{baseline_params, phase_scramble};
pub(crate) use scramble::baseline_into;
