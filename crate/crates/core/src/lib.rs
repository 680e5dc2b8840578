pub mod analysis;
pub mod codec;
pub mod compare;
mod binio;
pub mod corpus;
pub mod error;
pub mod fft;
pub mod gaussianize;
pub mod grid;
pub mod layout;
pub mod meta;
pub mod pyramid;
pub mod synthesis;
pub mod tpv;

pub use error::{Error, Result};
pub use grid::{ComplexGrid, Grid, RealGrid};
pub use pyramid::{PyramidConfig, ScaleSel, SteerablePyramid};
pub use analysis::{AnalysisConfig, Analyzer, TextureParams};
pub use layout::{Band, BlockKind, Family, Group, Layout};
pub use gaussianize::{NetParams, TransformedVector};
pub use meta::{Gaussian, MetaModel};
pub use synthesis::{SynthesisConfig, ValidParams};
