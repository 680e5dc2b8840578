//! Eigenbasis analysis of the meta-model and the patch-tiled texture codec.

mod dct;
mod pca;
mod quant;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::Analyzer;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::gaussianize::{transform_patch, TransformedVector};
use crate::grid::{Grid, RealGrid};
use crate::meta::MetaModel;
use crate::synthesis::{make_consistent, synthesize_terms, SynthesisConfig, SynthesisReport, Term};

pub use dct::{lowpass_support, LowpassCode};
pub use pca::{pca, reduce, subspace_pca, Eigenbasis, Partition};
pub use quant::{
    bin_counts, build_quantizer, calibrate_beta, entropy_report, ComponentQuantizer, EntropyReport,
    QuantizationScheme, QuantizerConfig, MAX_BINS,
};

const MAGIC: &[u8; 4] = b"TSC1";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 7 * 4 + 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub quantizer: QuantizerConfig,
    /// Low-pass radius is the larger image side divided by this.
    pub lowpass_divisor: usize,
    pub max_iters: usize,
    pub convergence_tol: f64,
    /// Optimize all patches over one shared image; otherwise patches are
    /// synthesized separately and averaged where they overlap.
    pub overlap_blend: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            quantizer: QuantizerConfig::default(),
            lowpass_divisor: 16,
            max_iters: 50,
            convergence_tol: 1e-3,
            overlap_blend: true,
        }
    }
}

/// Top-left offsets of `patch`-wide windows covering `0..side` with at least
/// one pixel of overlap between neighbours, spread evenly.
pub fn patch_offsets(side: usize, patch: usize) -> Result<Vec<usize>> {
    if patch < 2 || side < patch {
        return Err(Error::DimensionMismatch {
            expected: format!("image side of at least {patch}"),
            got: side.to_string(),
        });
    }
    if side == patch {
        return Ok(vec![0]);
    }
    let n = (side - 1).div_ceil(patch - 1);
    Ok((0..n)
        .map(|i| ((i * (side - patch)) as f64 / (n - 1) as f64).round() as usize)
        .collect())
}

/// Model, its eigenbasis and a quantization scheme, identified by content
/// hashes recorded in every stream.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub model: MetaModel,
    pub basis: Eigenbasis,
    pub scheme: QuantizationScheme,
    pub model_id: [u8; 8],
}

impl Codebook {
    pub fn new(model: MetaModel, scheme: QuantizationScheme) -> Result<Codebook> {
        if scheme.dim != model.dim() {
            return Err(Error::LayoutMismatch(format!(
                "scheme for {} components, model of dimension {}",
                scheme.dim,
                model.dim()
            )));
        }
        let digest = Sha256::digest(model.to_bytes()?);
        Ok(Codebook {
            basis: pca(&model),
            model_id: digest[..8].try_into().expect("8 bytes"),
            model,
            scheme,
        })
    }

    /// Builds the quantizer from the eigen-coefficients of training vectors.
    pub fn train(model: MetaModel, training: &[TransformedVector], config: &QuantizerConfig) -> Result<Codebook> {
        let basis = pca(&model);
        let kept = config.kept.min(basis.len());
        let coeffs = training
            .iter()
            .map(|v| basis.project(&v.values, kept))
            .collect::<Result<Vec<_>>>()?;
        let scheme = build_quantizer(&coeffs, basis.eigenvalues.as_slice(), config)?;
        Codebook::new(model, scheme)
    }

    /// Quantizer trained on `n` vectors drawn from the model itself with a
    /// fixed seed; used when no natural training set is at hand.
    pub fn self_trained(model: MetaModel, n: usize, seed: u64, config: &QuantizerConfig) -> Result<Codebook> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let training = model.sample(&mut rng, n);
        Codebook::train(model, &training, config)
    }

    fn patch_size(&self) -> usize {
        self.model.analysis_config.pyramid.image_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    pub nx: usize,
    pub ny: usize,
    pub kept: usize,
    pub lowpass_radius: usize,
    pub scheme_id: [u8; 8],
    pub model_id: [u8; 8],
}

impl StreamHeader {
    fn write(&self, w: &mut Writer) {
        for v in [
            self.width,
            self.height,
            self.patch,
            self.nx,
            self.ny,
            self.kept,
            self.lowpass_radius,
        ] {
            w.u32(v as u32);
        }
        w.buf.extend_from_slice(&self.scheme_id);
        w.buf.extend_from_slice(&self.model_id);
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        self.write(&mut w);
        w.buf
    }

    /// Seed of every random choice made while coding this stream.
    pub fn seed(&self) -> u64 {
        let h = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
    }

    pub fn patches(&self) -> usize {
        self.nx * self.ny
    }
}

/// A coded image.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeStream {
    pub header: StreamHeader,
    pub lowpass: LowpassCode,
    /// Quantization indices of the kept components, patches row-major.
    pub indices: Vec<Vec<u32>>,
}

impl CodeStream {
    pub fn to_bytes(&self, scheme: &QuantizationScheme) -> Result<Vec<u8>> {
        let mut w = Writer::new(MAGIC, VERSION);
        self.header.write(&mut w);
        w.f64(self.lowpass.dc);
        w.f32(self.lowpass.scale);
        w.buf.extend(self.lowpass.codes.iter().map(|&c| c as u8));
        let widths = scheme.widths();
        let mut bits = BitWriter::default();
        for idx in &self.indices {
            if idx.len() != widths.len() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} indices per patch", widths.len()),
                    got: idx.len().to_string(),
                });
            }
            for (&i, &wd) in idx.iter().zip(&widths) {
                bits.push(i, wd);
            }
        }
        w.buf.extend(bits.finish());
        Ok(w.buf)
    }

    pub fn from_bytes(data: &[u8], scheme: &QuantizationScheme) -> Result<CodeStream> {
        let (mut r, version) = Reader::open(data, MAGIC, "code stream")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let mut f = [0usize; 7];
        for v in f.iter_mut() {
            *v = r.u32()? as usize;
        }
        let header = StreamHeader {
            width: f[0],
            height: f[1],
            patch: f[2],
            nx: f[3],
            ny: f[4],
            kept: f[5],
            lowpass_radius: f[6],
            scheme_id: r.take(8)?.try_into().expect("8 bytes"),
            model_id: r.take(8)?.try_into().expect("8 bytes"),
        };
        if header.scheme_id != scheme.id() {
            return Err(r.error("stream was coded with a different quantization scheme"));
        }
        if header.kept != scheme.kept() {
            return Err(r.error("component count disagrees with the scheme"));
        }
        if header.width == 0 || header.height == 0 || header.width > 1 << 16 || header.height > 1 << 16 {
            return Err(r.error(format!("implausible size {}x{}", header.width, header.height)));
        }
        let dc = r.f64()?;
        let scale = r.f32()?;
        let n_codes = lowpass_support(header.width, header.height, header.lowpass_radius).len();
        let codes = r.take(n_codes)?.iter().map(|&b| b as i8).collect();
        let widths = scheme.widths();
        let total: u64 = header.patches() as u64 * widths.iter().map(|&w| w as u64).sum::<u64>();
        let packed = r.take(total.div_ceil(8) as usize)?;
        r.finish()?;
        let mut bits = BitReader::new(packed);
        let mut indices = Vec::with_capacity(header.patches());
        for _ in 0..header.patches() {
            let mut idx = Vec::with_capacity(widths.len());
            for (&wd, q) in widths.iter().zip(&scheme.components) {
                let i = bits.take(wd);
                if i as usize >= q.bins() {
                    return Err(Error::malformed("code stream", format!("index {i} past {} bins", q.bins())));
                }
                idx.push(i);
            }
            indices.push(idx);
        }
        Ok(CodeStream {
            lowpass: LowpassCode {
                width: header.width,
                height: header.height,
                radius: header.lowpass_radius,
                dc,
                scale,
                codes,
            },
            header,
            indices,
        })
    }
}

#[derive(Default)]
struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    n: u32,
}

impl BitWriter {
    fn push(&mut self, value: u32, width: u32) {
        for b in (0..width).rev() {
            self.acc = (self.acc << 1) | ((value >> b) & 1) as u64;
            self.n += 1;
            if self.n == 8 {
                self.out.push(self.acc as u8);
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.out.push((self.acc << (8 - self.n)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0 }
    }

    fn take(&mut self, width: u32) -> u32 {
        let mut v = 0u32;
        for _ in 0..width {
            let bit = (self.data[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        v
    }
}

/// Exact accounting of a serialized stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub width: usize,
    pub height: usize,
    pub patches: usize,
    /// Length of the serialized stream in bits.
    pub total_bits: u64,
    pub bits_per_pixel: f64,
    pub header_bits: u64,
    pub lowpass_bits: u64,
    pub texture_bits: u64,
    pub padding_bits: u64,
    /// Shannon bound of the texture payload from training occupancy.
    pub texture_entropy_bits: f64,
    pub entropy_bits_per_pixel: f64,
    pub component_bits: Vec<u32>,
    pub component_entropy: Vec<f64>,
}

impl RateReport {
    pub fn of(stream: &CodeStream, scheme: &QuantizationScheme) -> Result<RateReport> {
        let total_bits = 8 * stream.to_bytes(scheme)?.len() as u64;
        let header_bits = 8 * HEADER_BYTES as u64;
        let lowpass_bits = stream.lowpass.bits();
        let texture_bits = stream.header.patches() as u64 * scheme.patch_bits();
        let pixels = (stream.header.width * stream.header.height) as f64;
        let entropy_patch: f64 = scheme.entropy.iter().sum();
        let texture_entropy_bits = entropy_patch * stream.header.patches() as f64;
        Ok(RateReport {
            width: stream.header.width,
            height: stream.header.height,
            patches: stream.header.patches(),
            total_bits,
            bits_per_pixel: total_bits as f64 / pixels,
            header_bits,
            lowpass_bits,
            texture_bits,
            padding_bits: total_bits - header_bits - lowpass_bits - texture_bits,
            texture_entropy_bits,
            entropy_bits_per_pixel: (header_bits as f64 + lowpass_bits as f64 + texture_entropy_bits) / pixels,
            component_bits: scheme.widths(),
            component_entropy: scheme.entropy.clone(),
        })
    }
}

fn patch_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Encodes an image: per-patch eigen-coefficients plus a DCT low-pass.
pub fn encode_image(image: &RealGrid, book: &Codebook, config: &CodecConfig) -> Result<CodeStream> {
    image.ensure_finite("image")?;
    let p = book.patch_size();
    let xs = patch_offsets(image.width(), p)?;
    let ys = patch_offsets(image.height(), p)?;
    let radius = image.width().max(image.height()) / config.lowpass_divisor.max(1);
    let header = StreamHeader {
        width: image.width(),
        height: image.height(),
        patch: p,
        nx: xs.len(),
        ny: ys.len(),
        kept: book.scheme.kept(),
        lowpass_radius: radius,
        scheme_id: book.scheme.id(),
        model_id: book.model_id,
    };
    let seed = header.seed();
    let analyzer = Analyzer::new(book.model.analysis_config)?;
    let spots: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let indices = spots
        .par_iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let patch = image.crop(x, y, p)?;
            let mut rng = patch_rng(seed, i);
            let coeffs = match transform_patch(&analyzer, &patch, &mut rng) {
                Ok(v) => book.basis.project(&v.values, book.scheme.kept())?,
                Err(Error::DegeneratePatch { .. }) => {
                    log::warn!("patch at ({x},{y}) is flat; coding the model mean");
                    vec![0.0; book.scheme.kept()]
                }
                Err(e) => return Err(e.in_stage(format!("encoding patch at ({x},{y})"))),
            };
            book.scheme.quantize(&coeffs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CodeStream {
        lowpass: LowpassCode::encode(image, radius)?,
        header,
        indices,
    })
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub image: RealGrid,
    pub lowpass: RealGrid,
    /// Patches whose parameters could not be made consistent; they keep
    /// the low-pass content.
    pub failed_patches: Vec<usize>,
    pub reports: Vec<SynthesisReport>,
}

/// Reconstructs an image by synthesizing every patch from its decoded
/// texture parameters, starting from the decoded low-pass image.
pub fn decode_image(stream: &CodeStream, book: &Codebook, config: &CodecConfig) -> Result<Decoded> {
    let h = &stream.header;
    if h.model_id != book.model_id {
        return Err(Error::malformed("code stream", "stream was coded with a different model"));
    }
    if h.scheme_id != book.scheme.id() {
        return Err(Error::malformed("code stream", "stream was coded with a different quantization scheme"));
    }
    let p = book.patch_size();
    if h.patch != p {
        return Err(Error::malformed("code stream", format!("patch size {} but the model uses {p}", h.patch)));
    }
    let xs = patch_offsets(h.width, p)?;
    let ys = patch_offsets(h.height, p)?;
    if xs.len() != h.nx || ys.len() != h.ny || stream.indices.len() != h.patches() {
        return Err(Error::malformed("code stream", "patch grid does not match the image size"));
    }
    let seed = h.seed() ^ 0x5eed_dec0de;
    let analyzer = Analyzer::new(book.model.analysis_config)?;
    let spots: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let targets: Vec<Option<crate::analysis::TextureParams>> = stream
        .indices
        .par_iter()
        .enumerate()
        .map(|(i, idx)| {
            let coeffs = book.scheme.dequantize(idx)?;
            let v = book.basis.back_project(&coeffs)?;
            let raw = TransformedVector::new(v, book.model.layout.clone(), book.model.lambda)?;
            let mut rng = patch_rng(seed, i);
            match make_consistent(&raw, &analyzer, &mut rng) {
                Ok(vp) => Ok(Some(vp.params)),
                Err(e) => {
                    log::warn!("patch {i}: {e}");
                    Ok(None)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let failed_patches: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].is_none()).collect();
    let lowpass = stream.lowpass.decode()?;
    let synth = SynthesisConfig {
        max_iters: config.max_iters,
        output_size: p,
        convergence_tol: config.convergence_tol,
        init: None,
        overlap_blend: config.overlap_blend,
    };
    let (image, reports) = if config.overlap_blend {
        let terms: Vec<Term> = spots
            .iter()
            .zip(&targets)
            .filter_map(|(&(x, y), t)| t.as_ref().map(|t| Term::new(x, y, &analyzer, t)))
            .collect();
        let s = synthesize_terms(lowpass.clone(), &terms, &synth)?;
        (s.image, vec![s.report])
    } else {
        let mut acc = RealGrid::zeros(h.width, h.height);
        let mut weight = RealGrid::zeros(h.width, h.height);
        let mut reports = Vec::new();
        for (&(x, y), t) in spots.iter().zip(&targets) {
            let init = lowpass.crop(x, y, p)?;
            let patch = match t {
                Some(t) => {
                    let s = synthesize_terms(init, &[Term::new(0, 0, &analyzer, t)], &synth)?;
                    reports.push(s.report);
                    s.image
                }
                None => init,
            };
            for j in 0..p {
                for i in 0..p {
                    acc[(x + i, y + j)] += patch[(i, j)];
                    weight[(x + i, y + j)] += 1.0;
                }
            }
        }
        let img = Grid::from_fn(h.width, h.height, |x, y| acc[(x, y)] / weight[(x, y)]);
        (img, reports)
    };
    Ok(Decoded {
        image,
        lowpass,
        failed_patches,
        reports,
    })
}

/// Writes a stream and returns its rate accounting.
pub fn save_stream(path: impl AsRef<Path>, stream: &CodeStream, scheme: &QuantizationScheme) -> Result<RateReport> {
    std::fs::write(path, stream.to_bytes(scheme)?)?;
    RateReport::of(stream, scheme)
}

pub fn load_stream(path: impl AsRef<Path>, scheme: &QuantizationScheme) -> Result<CodeStream> {
    CodeStream::from_bytes(&std::fs::read(path)?, scheme)
}

impl QuantizationScheme {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QuantizationScheme> {
        QuantizationScheme::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn offsets_cover_with_overlap() {
        for (side, patch) in [(640, 64), (631, 64), (64, 64), (200, 64), (65, 64)] {
            let o = patch_offsets(side, patch).unwrap();
            assert_eq!(o[0], 0);
            assert_eq!(o.last().unwrap() + patch, side);
            for w in o.windows(2) {
                assert!(w[1] > w[0] && w[1] + 1 <= w[0] + patch, "{side}: {o:?}");
            }
        }
        assert_eq!(patch_offsets(631, 64).unwrap().len(), 10);
        assert_eq!(patch_offsets(640, 64).unwrap().len(), 11);
        assert!(patch_offsets(63, 64).is_err());
    }

    #[test]
    fn bits_per_pixel_arithmetic() {
        assert_eq!(56_320.0 / (640.0 * 640.0), 0.1375);
    }

    proptest! {
        #[test]
        fn bit_packing_round_trips(items in proptest::collection::vec((0u32..4096, 0u32..13), 0..200)) {
            let mut w = BitWriter::default();
            let masked: Vec<(u32, u32)> = items.iter().map(|&(v, wd)| (if wd == 0 { 0 } else { v & ((1 << wd) - 1) }, wd)).collect();
            for &(v, wd) in &masked {
                w.push(v, wd);
            }
            let bytes = w.finish();
            let total: u32 = masked.iter().map(|m| m.1).sum();
            prop_assert_eq!(bytes.len() as u32, total.div_ceil(8));
            let mut r = BitReader::new(&bytes);
            for &(v, wd) in &masked {
                prop_assert_eq!(r.take(wd), v);
            }
        }
    }
}
