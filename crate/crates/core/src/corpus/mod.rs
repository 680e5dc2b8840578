//! Image ingestion, patch ensembles and pipeline orchestration.

pub mod extract;
pub mod io;
pub mod pipeline;
pub mod synthetic;

pub use extract::{
    analyze_patches, extract_patches, indexed_rng, AnalyzedEnsemble, ExtractConfig, Manifest,
    PatchEnsemble, PatchRecord, SourceImage, OVERSAMPLE,
};
pub use io::{decode_image, load_image, montage, save_png, to_gray8, write_pgm16};
pub use pipeline::{load_corpus, run_config, run_pipeline, PipelineConfig, RunManifest};
pub use synthetic::{dead_leaves, power_law_noise, random_scene, scene, SceneKind};
