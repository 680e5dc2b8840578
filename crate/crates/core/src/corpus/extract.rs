//! Homogeneity-filtered patch ensembles.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{homogeneity, Analyzer, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::gaussianize::{transform_patch, TransformedVector};
use crate::grid::RealGrid;
use crate::meta::RNG_ALGORITHM;

/// Candidates drawn per retained patch.
pub const OVERSAMPLE: usize = 2;

/// Draws allowed per requested candidate before giving up on degenerate
/// material.
const MAX_DRAWS_PER_CANDIDATE: usize = 20;

/// A named image patches are cut from.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub id: String,
    pub image: RealGrid,
}

impl SourceImage {
    pub fn new(id: impl Into<String>, image: RealGrid) -> Self {
        SourceImage {
            id: id.into(),
            image,
        }
    }
}

/// Extraction settings; hashed into every manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub oversample: usize,
}

impl ExtractConfig {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        ExtractConfig {
            n,
            size,
            seed,
            oversample: OVERSAMPLE,
        }
    }

    /// Hex SHA-256 over the canonical JSON of the settings and source ids.
    pub fn hash(&self, sources: &[String]) -> String {
        let json = serde_json::to_vec(&(self, sources)).expect("plain data serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One candidate location and its inhomogeneity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source: usize,
    pub x: usize,
    pub y: usize,
    pub h: f64,
}

/// Everything needed to regenerate an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sources: Vec<String>,
    pub config: ExtractConfig,
    pub config_hash: String,
    pub rng: String,
    /// Largest `h` among retained patches.
    pub threshold: f64,
    /// Candidates skipped for falling under the variance floor.
    pub degenerate_draws: usize,
    pub retained: Vec<PatchRecord>,
    pub discarded: Vec<PatchRecord>,
}

impl Manifest {
    /// Checks the recorded hash and the retention rule.
    pub fn verify(&self) -> Result<()> {
        if self.config.hash(&self.sources) != self.config_hash {
            return Err(Error::malformed("manifest", "config hash does not match its settings"));
        }
        if self.retained.iter().any(|r| r.h > self.threshold) {
            return Err(Error::malformed("manifest", "retained patch above threshold"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Retained patches with their manifest.
#[derive(Debug, Clone)]
pub struct PatchEnsemble {
    pub manifest: Manifest,
    pub patches: Vec<RealGrid>,
}

impl PatchEnsemble {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Homogeneity values of the retained patches.
    pub fn h(&self) -> Vec<f64> {
        self.manifest.retained.iter().map(|r| r.h).collect()
    }
}

fn is_degenerate(patch: &RealGrid) -> bool {
    let (lo, hi) = patch.min_max();
    let var = patch.variance();
    var <= 0.0 || var <= VARIANCE_FLOOR * (hi - lo) * (hi - lo)
}

/// Draws `oversample * n` non-degenerate patch locations uniformly over
/// sources and positions, keeps the `n` with the smallest `h`.
pub fn extract_patches(sources: &[SourceImage], config: &ExtractConfig) -> Result<PatchEnsemble> {
    let (n, size) = (config.n, config.size);
    if n < 2 || config.oversample < 1 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 2 and oversample >= 1, got n = {n}, oversample = {}",
            config.oversample
        )));
    }
    if sources.is_empty() {
        return Err(Error::InsufficientData("no source images".into()));
    }
    if let Some(s) = sources
        .iter()
        .find(|s| s.image.width() < size || s.image.height() < size)
    {
        return Err(Error::DimensionMismatch {
            expected: format!("images of at least {size}×{size}"),
            got: format!("{} of {}×{}", s.id, s.image.width(), s.image.height()),
        });
    }
    let wanted = config.oversample * n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut locations = Vec::with_capacity(wanted);
    let mut degenerate = 0;
    let mut draws = 0;
    while locations.len() < wanted {
        if draws == wanted * MAX_DRAWS_PER_CANDIDATE {
            return Err(Error::InsufficientData(format!(
                "only {} non-degenerate patches in {draws} draws, {wanted} needed",
                locations.len()
            )));
        }
        draws += 1;
        let s = rng.random_range(0..sources.len());
        let img = &sources[s].image;
        let x = rng.random_range(0..=img.width() - size);
        let y = rng.random_range(0..=img.height() - size);
        if is_degenerate(&img.crop(x, y, size)?) {
            degenerate += 1;
        } else {
            locations.push((s, x, y));
        }
    }
    let mut candidates: Vec<PatchRecord> = locations
        .par_iter()
        .map(|&(source, x, y)| {
            let h = homogeneity(&sources[source].image.crop(x, y, size)?)?;
            Ok(PatchRecord { source, x, y, h })
        })
        .collect::<Result<_>>()?;
    // stable: ties keep draw order
    candidates.sort_by(|a, b| a.h.total_cmp(&b.h));
    let (retained, discarded) = candidates.split_at(n);
    let patches = retained
        .iter()
        .map(|r| sources[r.source].image.crop(r.x, r.y, size))
        .collect::<Result<_>>()?;
    let ids: Vec<String> = sources.iter().map(|s| s.id.clone()).collect();
    let manifest = Manifest {
        config_hash: config.hash(&ids),
        sources: ids,
        config: config.clone(),
        rng: RNG_ALGORITHM.into(),
        threshold: retained.last().map_or(0.0, |r| r.h),
        degenerate_draws: degenerate,
        retained: retained.to_vec(),
        discarded: discarded.to_vec(),
    };
    log::info!(
        "extracted {n} of {wanted} candidates, h threshold {:.4}, {degenerate} degenerate draws",
        manifest.threshold
    );
    Ok(PatchEnsemble { manifest, patches })
}

/// Per-patch random stream: stream `index` of a ChaCha8 keyed by `seed`.
pub fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Analyzed ensemble: transformed vectors in patch order plus the indices
/// of patches the analysis rejected.
#[derive(Debug, Clone)]
pub struct AnalyzedEnsemble {
    pub vectors: Vec<TransformedVector>,
    pub rejected: Vec<usize>,
}

/// Analyzes every patch in parallel, each with its own seeded scramble
/// stream; the merge is ordered by patch index.
pub fn analyze_patches(patches: &[RealGrid], analyzer: &Analyzer, seed: u64) -> AnalyzedEnsemble {
    let results: Vec<Result<TransformedVector>> = patches
        .par_iter()
        .enumerate()
        .map(|(i, p)| transform_patch(analyzer, p, &mut indexed_rng(seed, i as u64)))
        .collect();
    let mut vectors = Vec::with_capacity(results.len());
    let mut rejected = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => vectors.push(v),
            Err(e) => {
                log::debug!("patch {i} rejected: {e}");
                rejected.push(i);
            }
        }
    }
    if !rejected.is_empty() {
        log::warn!("{} of {} patches rejected by analysis", rejected.len(), patches.len());
    }
    AnalyzedEnsemble { vectors, rejected }
}
