//! Config-driven orchestration: extract, analyze, fit, then optional
//! sampling, coding and comparison stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::extract::{analyze_patches, extract_patches, hex, indexed_rng, ExtractConfig, SourceImage};
use super::io::{load_image, montage, save_png};
use super::synthetic::random_scene;
use crate::analysis::{AnalysisConfig, Analyzer};
use crate::codec::{decode_image, encode_image, save_stream, CodecConfig, Codebook, RateReport};
use crate::compare::{kld_curve, reference_basis, render_curves, BasisKind};
use crate::error::{Error, Result};
use crate::meta::{draw_texture, MetaModel};
use crate::synthesis::SynthesisConfig;
use crate::tpv::ParamFile;

/// Extensions picked up when a corpus path is a directory.
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "iml", "imc", "raw"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    pub out_dir: PathBuf,
    pub corpus: CorpusStanza,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub extract: ExtractStanza,
    #[serde(default)]
    pub fit: FitStanza,
    pub sample: Option<SampleStanza>,
    pub codec: Option<CodecStanza>,
    pub compare: Option<CompareStanza>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusStanza {
    /// Image files or directories of images.
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    pub synthetic: Option<SyntheticCorpus>,
}

/// Generated scenes used in place of, or alongside, image files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpus {
    pub count: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractStanza {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitStanza {
    pub model: PathBuf,
    pub codec: CodecConfig,
}

impl Default for FitStanza {
    fn default() -> Self {
        FitStanza {
            model: "model.msm".into(),
            codec: CodecConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleStanza {
    /// Transformed vectors written to `samples.tpv`.
    pub n: usize,
    /// Surrogate textures synthesized into a montage.
    #[serde(default)]
    pub textures: usize,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
}

impl PartialEq for SampleStanza {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecStanza {
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareStanza {
    pub candidate: PathBuf,
    pub basis: BasisKind,
    pub kmax: usize,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text)?;
        cfg.analysis.validate().map_err(|e| e.in_stage("analysis"))?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("plain data serializes")))
    }
}

/// One produced file and its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Summary written to `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub patches: usize,
    pub rejected_patches: usize,
    pub stage_seconds: BTreeMap<String, f64>,
    pub artifacts: BTreeMap<String, Artifact>,
    pub rate: Option<RateReport>,
}

struct Run<'a> {
    out: PathBuf,
    manifest: &'a mut RunManifest,
}

impl Run<'_> {
    fn record(&mut self, name: &str, file: &str) -> Result<PathBuf> {
        let path = self.out.join(file);
        let sha256 = hex(&Sha256::digest(fs::read(&path)?));
        self.manifest
            .artifacts
            .insert(name.into(), Artifact { path: path.clone(), sha256 });
        Ok(path)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let t = Instant::now();
        let out = f(self).map_err(|e| e.in_stage(name))?;
        self.manifest
            .stage_seconds
            .insert(name.into(), t.elapsed().as_secs_f64());
        Ok(out)
    }
}

fn collect_paths(paths: &[PathBuf], base: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        let p = base.join(p);
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(&p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

/// Loads the corpus described by a stanza, files first, then synthetic
/// scenes drawn from `seed`.
pub fn load_corpus(stanza: &CorpusStanza, base: &Path, seed: u64) -> Result<Vec<SourceImage>> {
    let mut sources = Vec::new();
    for path in collect_paths(&stanza.paths, base)? {
        let image = load_image(&path)?;
        sources.push(SourceImage::new(path.display().to_string(), image));
    }
    if let Some(syn) = &stanza.synthetic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..syn.count {
            let (kind, image) = random_scene(syn.size, &mut rng);
            sources.push(SourceImage::new(format!("synthetic-{i}-{kind:?}"), image));
        }
    }
    if sources.is_empty() {
        return Err(Error::InvalidConfig("[corpus] lists no images".into()));
    }
    Ok(sources)
}

/// Reads a TOML config and runs every configured stage, writing artifacts
/// under its `out_dir`.
pub fn run_pipeline(config_path: impl AsRef<Path>) -> Result<RunManifest> {
    let config_path = config_path.as_ref();
    let text = fs::read_to_string(config_path)?;
    let config = PipelineConfig::from_toml(&text)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    run_config(&config, base)
}

/// Runs a parsed config; relative paths resolve against `base`.
pub fn run_config(config: &PipelineConfig, base: &Path) -> Result<RunManifest> {
    let out = base.join(&config.out_dir);
    fs::create_dir_all(&out)?;
    let mut manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.seed,
        patches: 0,
        rejected_patches: 0,
        stage_seconds: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        rate: None,
    };
    let mut run = Run {
        out: out.clone(),
        manifest: &mut manifest,
    };
    let seed = config.seed;
    let acfg = config.analysis;

    let sources = run.stage("corpus", |_| load_corpus(&config.corpus, base, seed))?;
    let ensemble = run.stage("extract", |r| {
        let e = extract_patches(
            &sources,
            &ExtractConfig::new(config.extract.n, acfg.pyramid.image_size, seed),
        )?;
        e.manifest.save(r.out.join("manifest.json"))?;
        r.record("manifest", "manifest.json")?;
        Ok(e)
    })?;
    let vectors = run.stage("analyze", |r| {
        let analyzer = Analyzer::new(acfg)?;
        let a = analyze_patches(&ensemble.patches, &analyzer, seed);
        r.manifest.patches = a.vectors.len();
        r.manifest.rejected_patches = a.rejected.len();
        ParamFile::from_transformed(acfg, &a.vectors)?.save(r.out.join("ensemble.tpv"))?;
        r.record("ensemble", "ensemble.tpv")?;
        Ok(a.vectors)
    })?;
    let model_file = config.fit.model.display().to_string();
    let scheme_file = config.fit.model.with_extension("tsq").display().to_string();
    let book = run.stage("fit", |r| {
        let model = MetaModel::fit(&vectors, acfg)?;
        model.save(r.out.join(&model_file))?;
        r.record("model", &model_file)?;
        let book = Codebook::train(model, &vectors, &config.fit.codec.quantizer)?;
        book.scheme.save(r.out.join(&scheme_file))?;
        r.record("scheme", &scheme_file)?;
        Ok(book)
    })?;
    if let Some(s) = &config.sample {
        run.stage("sample", |r| {
            let mut rng = indexed_rng(seed, 1);
            let samples = book.model.sample(&mut rng, s.n);
            ParamFile::from_transformed(acfg, &samples)?.save(r.out.join("samples.tpv"))?;
            r.record("samples", "samples.tpv")?;
            if s.textures > 0 {
                let tiles = (0..s.textures)
                    .map(|i| {
                        let mut rng = indexed_rng(seed, 1000 + i as u64);
                        draw_texture(&book.model, &mut rng, &s.synthesis).map(|t| t.image)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let cols = (s.textures as f64).sqrt().ceil() as usize;
                montage(&tiles, cols, 2)?.save(r.out.join("textures.png"))?;
                r.record("textures", "textures.png")?;
            }
            Ok(())
        })?;
    }
    if let Some(c) = &config.codec {
        run.stage("codec", |r| {
            let image = load_image(base.join(&c.image))?;
            let stream = encode_image(&image, &book, &config.fit.codec)?;
            let report = save_stream(r.out.join("image.tsc"), &stream, &book.scheme)?;
            r.record("stream", "image.tsc")?;
            fs::write(r.out.join("rate.json"), serde_json::to_string_pretty(&report)?)?;
            let decoded = decode_image(&stream, &book, &config.fit.codec)?;
            save_png(r.out.join("decoded.png"), &decoded.image, Some(image.min_max()))?;
            r.record("decoded", "decoded.png")?;
            r.manifest.rate = Some(report);
            Ok(())
        })?;
    }
    if let Some(c) = &config.compare {
        run.stage("compare", |r| {
            let candidate = MetaModel::load(base.join(&c.candidate))?;
            let basis = reference_basis(&book.model, c.basis)?;
            let curve = kld_curve(&book.model, &candidate, &basis, c.kmax.min(basis.len()))?;
            curve.write_csv(fs::File::create(r.out.join("curve.csv"))?, true)?;
            r.record("curve", "curve.csv")?;
            render_curves(
                &[(curve.points.as_slice(), [200, 30, 30]), (curve.true_mean.as_slice(), [30, 30, 200])],
                640,
                400,
            )
            .save(r.out.join("curve.png"))?;
            r.record("curve_plot", "curve.png")?;
            Ok(())
        })?;
    }
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_names_the_stanza() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::from_toml("out_dir = \"o\"\n[corpus]\n[extract]\nn = 4\n").unwrap();
        let err = run_config(&cfg, dir.path()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("corpus"), "{text}");
        assert!(format!("{:?}", err).contains("[corpus]"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = "out_dir = \"o\"\n[corpus]\nbogus = 1\n[extract]\nn = 4\n";
        assert!(PipelineConfig::from_toml(bad).is_err());
    }

    #[test]
    fn defaults_fill_analysis_and_fit() {
        let cfg = PipelineConfig::from_toml(
            "out_dir = \"o\"\n[corpus]\nsynthetic = { count = 1, size = 64 }\n[extract]\nn = 4\n[analysis]\nna = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.analysis.na, 5);
        assert_eq!(cfg.analysis.pyramid.image_size, 64);
        assert_eq!(cfg.fit.model, PathBuf::from("model.msm"));
        assert_eq!(cfg.hash(), cfg.clone().hash());
    }
}
