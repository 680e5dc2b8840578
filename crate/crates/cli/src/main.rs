use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use texsur_core::analysis::{homogeneity, Analyzer};
use texsur_core::codec::{
    decode_image, encode_image, load_stream, pca, save_stream, subspace_pca, CodecConfig, Codebook,
    Partition, QuantizationScheme,
};
use texsur_core::compare::{
    kld_curve, normalized_covariance_image, reference_basis, render_curves, render_heatmap,
    BasisKind,
};
use texsur_core::corpus::{
    analyze_patches, extract_patches, indexed_rng, load_image, montage, run_pipeline, save_png,
    write_pgm16, ExtractConfig, SourceImage,
};
use texsur_core::meta::{draw_texture, texture_from_vector};
use texsur_core::pyramid::build_pyramid;
use texsur_core::synthesis::synthesize;
use texsur_core::tpv::{ParamFile, VectorKind};
use texsur_core::{AnalysisConfig, MetaModel, RealGrid, SynthesisConfig};

/// Vectors drawn from a model to train its quantizer when no sidecar exists.
const SELF_TRAIN_SAMPLES: usize = 4096;
const SELF_TRAIN_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "texsur", version, about = "Natural texture surrogates and texture-statistics coding")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with [analysis], [synthesis] and [codec] settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut homogeneity-filtered patches from images into a directory.
    Extract(ExtractArgs),
    /// Measure texture parameters of an image or a patch of it.
    Analyze(AnalyzeArgs),
    /// Fit the Gaussian meta-model to a directory of patches.
    Fit(FitArgs),
    /// Draw transformed parameter vectors from a model.
    Sample(SampleArgs),
    /// Synthesize a texture from stored parameters.
    Synthesize(SynthesizeArgs),
    /// Draw surrogate textures from a model into PNGs and a montage.
    SampleTexture(SampleTextureArgs),
    /// Code an image against a model.
    Encode(EncodeArgs),
    /// Reconstruct an image from a code stream.
    Decode(DecodeArgs),
    /// KLD curve of a candidate model against a reference eigenbasis.
    Compare(CompareArgs),
    /// Variance spectrum of a model's eigenbasis.
    PcaReport(PcaReportArgs),
    /// Run a full TOML-configured pipeline.
    Run(RunArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Source images (PNG, PGM or raw van Hateren).
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Patches to retain.
    #[arg(long)]
    n: usize,
    /// Patch side; the configured analysis size by default.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    image: PathBuf,
    /// Region `x,y,size`; the whole (square) image otherwise.
    #[arg(long, value_parser = parse_patch)]
    patch: Option<(usize, usize, usize)>,
    #[arg(long)]
    out: PathBuf,
    /// Store the transformed vector instead of the native parameters.
    #[arg(long)]
    transformed: bool,
    /// Write every pyramid band as PNG into this directory.
    #[arg(long)]
    dump_pyramid: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Directory of patch images.
    #[arg(long, conflicts_with = "params")]
    patches: Option<PathBuf>,
    /// Transformed vectors from `analyze --transformed` or a pipeline run.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    params: PathBuf,
    /// Which vector of the file to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleTextureArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Quantization scheme; `<model>.tsq` when present.
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Rate accounting as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    stream: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the decoded image as 16-bit PGM.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    /// full, soc or hoc.
    #[arg(long, default_value = "full")]
    basis: BasisKind,
    #[arg(long, default_value_t = 100)]
    kmax: usize,
    /// Add the curve with the candidate mean replaced by the reference mean.
    #[arg(long)]
    true_mean: bool,
    #[arg(long)]
    out: PathBuf,
    /// Line plot of the curve(s).
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Candidate covariance normalized by the reference diagonal.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct PcaReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    pipeline: PathBuf,
}

/// Settings shared by the verbs; unknown tables are ignored so pipeline
/// configs can be reused.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct Settings {
    analysis: AnalysisConfig,
    synthesis: SynthesisConfig,
    codec: CodecConfig,
}

fn parse_patch(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| e.to_string())?;
    match v[..] {
        [x, y, n] => Ok((x, y, n)),
        _ => Err("expected x,y,size".into()),
    }
}

fn load_settings(path: Option<&Path>) -> Result<Settings> {
    let Some(path) = path else {
        return Ok(Settings::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s: Settings = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    s.analysis.validate()?;
    Ok(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<MetaModel> {
    MetaModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn scheme_path(model: &Path) -> PathBuf {
    model.with_extension("tsq")
}

/// The model's codebook, from an explicit scheme, the sidecar, or a
/// self-trained fallback.
fn codebook(model_path: &Path, scheme: Option<&Path>, settings: &Settings) -> Result<Codebook> {
    let model = load_model(model_path)?;
    let sidecar = scheme_path(model_path);
    let path = scheme.map(Path::to_path_buf).or_else(|| sidecar.exists().then_some(sidecar));
    match path {
        Some(p) => {
            let s = QuantizationScheme::load(&p).with_context(|| format!("loading scheme {}", p.display()))?;
            Ok(Codebook::new(model, s)?)
        }
        None => {
            log::warn!("no quantization scheme found; training one on model samples");
            Ok(Codebook::self_trained(
                model,
                SELF_TRAIN_SAMPLES,
                SELF_TRAIN_SEED,
                &settings.codec.quantizer,
            )?)
        }
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn extract(cli: &Cli, a: &ExtractArgs, s: &Settings) -> Result<()> {
    let sources = a
        .images
        .iter()
        .map(|p| {
            let img = load_image(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(SourceImage::new(p.display().to_string(), img))
        })
        .collect::<Result<Vec<_>>>()?;
    let size = a.size.unwrap_or(s.analysis.pyramid.image_size);
    let e = extract_patches(&sources, &ExtractConfig::new(a.n, size, cli.seed))?;
    fs::create_dir_all(&a.out_dir)?;
    for (i, p) in e.patches.iter().enumerate() {
        write_pgm16(a.out_dir.join(format!("patch_{i:06}.pgm")), p)?;
    }
    e.manifest.save(a.out_dir.join("manifest.json"))?;
    println!(
        "{} patches written to {} (h threshold {:.4})",
        e.len(),
        a.out_dir.display(),
        e.manifest.threshold
    );
    Ok(())
}

fn analyze(cli: &Cli, a: &AnalyzeArgs, s: &Settings) -> Result<()> {
    let img = load_image(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let patch = match a.patch {
        Some((x, y, n)) => img.crop(x, y, n)?,
        None if img.is_square() => img,
        None => bail!(
            "image is {}x{}; pass --patch x,y,size for non-square images",
            img.width(),
            img.height()
        ),
    };
    let cfg = s.analysis.with_size(patch.width());
    let analyzer = Analyzer::new(cfg)?;
    let file = if a.transformed {
        let v = texsur_core::gaussianize::transform_patch(&analyzer, &patch, &mut indexed_rng(cli.seed, 0))?;
        ParamFile::from_transformed(cfg, &[v])?
    } else {
        ParamFile::from_params(cfg, &[analyzer.analyze(&patch)?])?
    };
    file.save(&a.out)?;
    if let Some(dir) = &a.dump_pyramid {
        fs::create_dir_all(dir)?;
        let pyr = build_pyramid(&patch, cfg.pyramid)?;
        save_png(dir.join("highpass.png"), &pyr.highpass, None)?;
        save_png(dir.join("lowpass.png"), &pyr.lowpass, None)?;
        for (si, scale) in pyr.bands.iter().enumerate() {
            for (k, band) in scale.iter().enumerate() {
                save_png(dir.join(format!("band_s{}_o{k}_real.png", si + 1)), &band.re(), None)?;
                save_png(dir.join(format!("band_s{}_o{k}_mag.png", si + 1)), &band.abs(), None)?;
            }
        }
    }
    println!(
        "{} parameters (h = {:.4}) written to {}",
        file.vectors[0].len(),
        homogeneity(&patch).unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn fit(cli: &Cli, a: &FitArgs, s: &Settings) -> Result<()> {
    let (cfg, vectors) = match (&a.patches, &a.params) {
        (Some(dir), None) => {
            let files = image_files(dir)?;
            if files.is_empty() {
                bail!("no PNG or PGM patches in {}", dir.display());
            }
            let patches = files
                .iter()
                .map(|p| load_image(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<RealGrid>>>()?;
            let cfg = s.analysis.with_size(patches[0].width());
            let analyzer = Analyzer::new(cfg)?;
            let analyzed = analyze_patches(&patches, &analyzer, cli.seed);
            for i in &analyzed.rejected {
                log::warn!("skipped {}", files[*i].display());
            }
            (cfg, analyzed.vectors)
        }
        (None, Some(p)) => {
            let f = ParamFile::load(p).with_context(|| format!("loading {}", p.display()))?;
            (f.config, f.transformed()?)
        }
        _ => bail!("pass exactly one of --patches or --params"),
    };
    let model = MetaModel::fit(&vectors, cfg)?;
    model.save(&a.out)?;
    let book = Codebook::train(model, &vectors, &s.codec.quantizer)?;
    book.scheme.save(scheme_path(&a.out))?;
    println!(
        "fitted {}-dimensional model on {} vectors; wrote {} and {}",
        book.model.dim(),
        vectors.len(),
        a.out.display(),
        scheme_path(&a.out).display()
    );
    Ok(())
}

fn sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut rng = indexed_rng(cli.seed, 0);
    let v = model.sample(&mut rng, a.n);
    ParamFile::from_transformed(model.analysis_config, &v)?.save(&a.out)?;
    println!("{} vectors written to {}", a.n, a.out.display());
    Ok(())
}

fn synthesis_config(s: &Settings, size: Option<usize>, iters: Option<usize>, patch: usize) -> SynthesisConfig {
    let mut c = s.synthesis.clone();
    c.output_size = size.unwrap_or(c.output_size.max(patch));
    if let Some(i) = iters {
        c.max_iters = i;
    }
    c
}

fn synthesize_cmd(cli: &Cli, a: &SynthesizeArgs, s: &Settings) -> Result<()> {
    let file = ParamFile::load(&a.params).with_context(|| format!("loading {}", a.params.display()))?;
    let cfg = file.config;
    let sc = synthesis_config(s, a.size, a.iters, cfg.pyramid.image_size);
    let mut rng = indexed_rng(cli.seed, a.index as u64);
    let (image, report) = match file.kind {
        VectorKind::Native => {
            let params = file.params()?;
            let p = params.get(a.index).context("index beyond the stored vectors")?;
            let out = synthesize(p, &cfg, &sc, &mut rng)?;
            (out.image, out.report)
        }
        VectorKind::Transformed => {
            let vs = file.transformed()?;
            let v = vs.get(a.index).context("index beyond the stored vectors")?;
            let out = texture_from_vector(v, &Analyzer::new(cfg)?, &mut rng, &sc)?;
            (out.image, out.report)
        }
    };
    save_png(&a.out, &image, None)?;
    println!(
        "{}x{} texture written to {}; {} iterations, max residual {:.4}{}",
        image.width(),
        image.height(),
        a.out.display(),
        report.iterations,
        report.max_residual(),
        if report.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

#[derive(Serialize)]
struct TextureRecord {
    file: String,
    iterations: usize,
    max_residual: f64,
    converged: bool,
}

fn sample_texture(cli: &Cli, a: &SampleTextureArgs, s: &Settings) -> Result<()> {
    let model = load_model(&a.model)?;
    let sc = synthesis_config(s, a.size, None, model.analysis_config.pyramid.image_size);
    fs::create_dir_all(&a.out_dir)?;
    let mut tiles = Vec::with_capacity(a.n);
    let mut records = Vec::with_capacity(a.n);
    for i in 0..a.n {
        let mut rng = indexed_rng(cli.seed, i as u64);
        let t = draw_texture(&model, &mut rng, &sc)?;
        let file = format!("texture_{i:04}.png");
        save_png(a.out_dir.join(&file), &t.image, None)?;
        records.push(TextureRecord {
            file,
            iterations: t.report.iterations,
            max_residual: t.report.max_residual(),
            converged: t.report.converged,
        });
        tiles.push(t.image);
    }
    let cols = (a.n as f64).sqrt().ceil() as usize;
    montage(&tiles, cols, 2)?.save(a.out_dir.join("montage.png"))?;
    write_json(&a.out_dir.join("report.json"), &records)?;
    let ok = records.iter().filter(|r| r.converged).count();
    println!("{} textures in {} ({ok} converged)", a.n, a.out_dir.display());
    Ok(())
}

fn encode(a: &EncodeArgs, s: &Settings) -> Result<()> {
    let book = codebook(&a.model, a.scheme.as_deref(), s)?;
    let img = load_image(&a.image).with_context(|| format!("loading {}", a.image.display()))?;
    let stream = encode_image(&img, &book, &s.codec)?;
    let report = save_stream(&a.out, &stream, &book.scheme)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    println!(
        "{} bits for {}x{} pixels: {:.4} bits/pixel",
        report.total_bits, report.width, report.height, report.bits_per_pixel
    );
    Ok(())
}

fn decode(a: &DecodeArgs, s: &Settings) -> Result<()> {
    let book = codebook(&a.model, a.scheme.as_deref(), s)?;
    let stream = load_stream(&a.stream, &book.scheme)
        .with_context(|| format!("loading stream {}", a.stream.display()))?;
    let d = decode_image(&stream, &book, &s.codec)?;
    save_png(&a.out, &d.image, None)?;
    if let Some(p) = &a.pgm {
        write_pgm16(p, &d.image)?;
    }
    if !d.failed_patches.is_empty() {
        log::warn!("{} patches kept their low-pass content", d.failed_patches.len());
    }
    println!("decoded {}x{} image to {}", d.image.width(), d.image.height(), a.out.display());
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let reference = load_model(&a.reference)?;
    let candidate = load_model(&a.candidate)?;
    let basis = reference_basis(&reference, a.basis)?;
    let kmax = a.kmax.min(basis.len());
    if kmax < a.kmax {
        log::warn!("kmax clamped to the {kmax} available components");
    }
    let curve = kld_curve(&reference, &candidate, &basis, kmax)?;
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    curve.write_csv(std::io::BufWriter::new(file), a.true_mean)?;
    if let Some(p) = &a.plot {
        let mut series = vec![(curve.points.as_slice(), [200, 30, 30])];
        if a.true_mean {
            series.push((curve.true_mean.as_slice(), [30, 30, 200]));
        }
        render_curves(&series, 640, 400).save(p)?;
    }
    if let Some(p) = &a.heatmap {
        let mut diag: Vec<f64> = reference.gaussian.covariance().diagonal().iter().copied().collect();
        // structurally constant coordinates are shown unnormalized
        let constant = diag.iter().filter(|d| **d <= 0.0).count();
        if constant > 0 {
            log::info!("{constant} reference coordinates have zero variance");
            diag.iter_mut().filter(|d| **d <= 0.0).for_each(|d| *d = 1.0);
        }
        let m = normalized_covariance_image(candidate.gaussian.covariance(), &diag)?;
        render_heatmap(&m, 1.0).save(p)?;
    }
    let last = curve.points.last().map_or(0.0, |p| p.kld);
    println!("KLD at k = {kmax}: {last:.6} nats; curve in {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct PcaReport {
    dim: usize,
    n_train: usize,
    eigenvalues: Vec<f64>,
    cumulative_variance: Vec<f64>,
    components_for: Vec<(f64, usize)>,
    soc_components_for: Vec<(f64, usize)>,
    hoc_components_for: Vec<(f64, usize)>,
}

fn pca_report(a: &PcaReportArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let full = pca(&model);
    let (soc, hoc) = subspace_pca(&model, &Partition::of(&model.layout))?;
    let fractions = [0.5, 0.9, 0.95, 0.99, 0.999];
    let counts = |b: &texsur_core::codec::Eigenbasis| -> Vec<(f64, usize)> {
        fractions.iter().map(|&f| (f, b.components_for(f))).collect()
    };
    let report = PcaReport {
        dim: full.dim(),
        n_train: model.n_train,
        eigenvalues: full.eigenvalues.iter().copied().collect(),
        cumulative_variance: full.cumulative_variance(),
        components_for: counts(&full),
        soc_components_for: counts(&soc),
        hoc_components_for: counts(&hoc),
    };
    write_json(&a.out, &report)?;
    for (f, k) in &report.components_for {
        println!("{:>5.1}% variance: {k} components", f * 100.0);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let settings = load_settings(cli.config.as_deref())?;
    match &cli.command {
        Command::Extract(a) => extract(&cli, a, &settings),
        Command::Analyze(a) => analyze(&cli, a, &settings),
        Command::Fit(a) => fit(&cli, a, &settings),
        Command::Sample(a) => sample(&cli, a),
        Command::Synthesize(a) => synthesize_cmd(&cli, a, &settings),
        Command::SampleTexture(a) => sample_texture(&cli, a, &settings),
        Command::Encode(a) => encode(a, &settings),
        Command::Decode(a) => decode(a, &settings),
        Command::Compare(a) => compare(a),
        Command::PcaReport(a) => pca_report(a),
        Command::Run(a) => {
            let m = run_pipeline(&a.pipeline)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(())
        }
    }
}
