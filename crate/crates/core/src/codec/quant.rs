use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TTSQ";
const VERSION: u32 = 1;
pub const MAX_BINS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerConfig {
    /// Components with more than one bin; the rest are dropped.
    pub kept: usize,
    /// Fixed-width index bits per patch the slope is calibrated to; when
    /// absent `beta` is used as given.
    pub patch_bits: Option<u32>,
    pub beta: f64,
    /// Leading components whose bin count is multiplied by
    /// `2^top_boost_bits`.
    pub top: usize,
    pub top_boost_bits: u32,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            kept: 200,
            patch_bits: Some(480),
            beta: 1.0,
            top: 10,
            top_boost_bits: 2,
        }
    }
}

/// Bins per component: `clamp(round(beta (log2 l_i - log2 l_K)), 1, 4096)`
/// for the first `kept` components (`l_K` the last kept eigenvalue), with
/// the leading `top` boosted; one bin for all others.
pub fn bin_counts(eigenvalues: &[f64], config: &QuantizerConfig, beta: f64) -> Vec<usize> {
    let kept = config.kept.min(eigenvalues.len());
    let mut out = vec![1; eigenvalues.len()];
    if kept == 0 {
        return out;
    }
    let floor = eigenvalues[0].max(f64::MIN_POSITIVE) * 1e-300;
    let log_k = eigenvalues[kept - 1].max(floor).log2();
    for (i, o) in out.iter_mut().enumerate().take(kept) {
        let raw = (beta * (eigenvalues[i].max(floor).log2() - log_k)).round();
        let mut b = raw.clamp(1.0, MAX_BINS as f64) as usize;
        if i < config.top {
            b = (b << config.top_boost_bits.min(12)).min(MAX_BINS);
        }
        *o = b;
    }
    out
}

fn index_bits(bins: usize) -> u32 {
    if bins <= 1 {
        0
    } else {
        usize::BITS - (bins - 1).leading_zeros()
    }
}

/// Slope for the bin rule: the configured `beta`, or the largest slope whose
/// fixed-width index cost fits `patch_bits`.
pub fn calibrate_beta(eigenvalues: &[f64], config: &QuantizerConfig) -> f64 {
    let Some(budget) = config.patch_bits else {
        return config.beta;
    };
    let cost = |beta: f64| -> u32 {
        bin_counts(eigenvalues, config, beta)
            .iter()
            .map(|&b| index_bits(b))
            .sum()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while cost(hi) <= budget && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cost(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Equal-occupancy scalar quantizer of one coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentQuantizer {
    /// Strictly increasing interior edges; bin `j` is `[e_{j-1}, e_j)`.
    pub edges: Vec<f64>,
    /// Reconstruction value of each bin (the mean of its training values).
    pub levels: Vec<f64>,
}

impl ComponentQuantizer {
    pub fn bins(&self) -> usize {
        self.levels.len()
    }

    pub fn bits(&self) -> u32 {
        index_bits(self.bins())
    }

    pub fn quantize(&self, x: f64) -> u32 {
        self.edges.partition_point(|&e| e <= x) as u32
    }

    fn fit(values: &[f64], bins: usize) -> ComponentQuantizer {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let bins = bins.min(n).max(1);
        let mut edges: Vec<f64> = Vec::with_capacity(bins - 1);
        for j in 1..bins {
            let cut = j * n / bins;
            let e = 0.5 * (sorted[cut - 1] + sorted[cut]);
            if edges.last().is_none_or(|&last| e > last) && e > sorted[0] {
                edges.push(e);
            }
        }
        let mut q = ComponentQuantizer {
            edges,
            levels: Vec::new(),
        };
        let mut sums = vec![(0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY); q.edges.len() + 1];
        for &x in &sorted {
            let s = &mut sums[q.quantize(x) as usize];
            s.0 += x;
            s.1 += 1;
            s.2 = s.2.min(x);
            s.3 = s.3.max(x);
        }
        q.levels = sums
            .iter()
            .enumerate()
            .map(|(j, &(sum, count, lo, hi))| {
                if count > 0 {
                    (sum / count as f64).clamp(lo, hi)
                } else {
                    let a = if j == 0 { q.edges[0] } else { q.edges[j - 1] };
                    let b = q.edges.get(j).copied().unwrap_or(a);
                    0.5 * (a + b)
                }
            })
            .collect();
        q
    }
}

/// Per-component quantizers for the leading eigen-coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationScheme {
    pub components: Vec<ComponentQuantizer>,
    /// Total number of components; those past `components.len()` have a
    /// single bin reconstructing to zero.
    pub dim: usize,
    pub beta: f64,
    /// Training entropy of each kept component in bits.
    pub entropy: Vec<f64>,
}

impl QuantizationScheme {
    pub fn kept(&self) -> usize {
        self.components.len()
    }

    pub fn bins(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.components.iter().map(|c| c.bins()).collect();
        b.resize(self.dim, 1);
        b
    }

    /// Index widths of the kept components.
    pub fn widths(&self) -> Vec<u32> {
        self.components.iter().map(|c| c.bits()).collect()
    }

    /// Serialized index bits per patch.
    pub fn patch_bits(&self) -> u64 {
        self.widths().iter().map(|&w| w as u64).sum()
    }

    pub fn quantize(&self, coeffs: &[f64]) -> Result<Vec<u32>> {
        if coeffs.len() < self.kept() {
            return Err(Error::DimensionMismatch {
                expected: format!("at least {} coefficients", self.kept()),
                got: coeffs.len().to_string(),
            });
        }
        Ok(self
            .components
            .iter()
            .zip(coeffs)
            .map(|(q, &c)| q.quantize(c))
            .collect())
    }

    pub fn dequantize(&self, indices: &[u32]) -> Result<Vec<f64>> {
        if indices.len() != self.kept() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} indices", self.kept()),
                got: indices.len().to_string(),
            });
        }
        self.components
            .iter()
            .zip(indices)
            .map(|(q, &i)| {
                q.levels.get(i as usize).copied().ok_or_else(|| {
                    Error::OutOfRange(format!("bin {i} of a {}-bin quantizer", q.bins()))
                })
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.dim as u64);
        w.f64(self.beta);
        w.u64(self.components.len() as u64);
        for c in &self.components {
            w.u64(c.edges.len() as u64);
            w.f64s(&c.edges);
            w.f64s(&c.levels);
        }
        w.f64s(&self.entropy);
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<QuantizationScheme> {
        let (mut r, version) = Reader::open(data, MAGIC, "quantization scheme")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let dim = r.u64()? as usize;
        let beta = r.f64()?;
        let kept = r.count(16)?;
        if kept > dim {
            return Err(r.error("more kept components than dimensions"));
        }
        let mut components = Vec::with_capacity(kept);
        for _ in 0..kept {
            let ne = r.count(16)?;
            let edges = r.f64s(ne)?;
            let levels = r.f64s(ne + 1)?;
            if edges.windows(2).any(|w| w[1] <= w[0]) {
                return Err(r.error("bin edges are not strictly increasing"));
            }
            components.push(ComponentQuantizer { edges, levels });
        }
        let entropy = r.f64s(kept)?;
        r.finish()?;
        Ok(QuantizationScheme {
            components,
            dim,
            beta,
            entropy,
        })
    }

    /// Short content hash identifying the scheme in code streams.
    pub fn id(&self) -> [u8; 8] {
        let h = Sha256::digest(self.to_bytes());
        h[..8].try_into().expect("8 bytes")
    }
}

/// Builds the scheme from training coefficient vectors (one per patch, at
/// least `kept` long) and the basis eigenvalues.
pub fn build_quantizer(
    samples: &[Vec<f64>],
    eigenvalues: &[f64],
    config: &QuantizerConfig,
) -> Result<QuantizationScheme> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty coefficient histogram".into()));
    }
    let kept = config.kept.min(eigenvalues.len());
    if let Some(s) = samples.iter().find(|s| s.len() < kept) {
        return Err(Error::DimensionMismatch {
            expected: format!("at least {kept} coefficients per sample"),
            got: s.len().to_string(),
        });
    }
    let beta = calibrate_beta(eigenvalues, config);
    let counts = bin_counts(eigenvalues, config, beta);
    let components = (0..kept)
        .map(|i| {
            let col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            ComponentQuantizer::fit(&col, counts[i])
        })
        .collect();
    let mut scheme = QuantizationScheme {
        components,
        dim: eigenvalues.len(),
        beta,
        entropy: Vec::new(),
    };
    scheme.entropy = entropy_report(&scheme, samples)?.per_component;
    Ok(scheme)
}

/// Shannon entropy of bin occupancy per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// Bits per kept component.
    pub per_component: Vec<f64>,
    pub total: f64,
}

pub fn entropy_report(scheme: &QuantizationScheme, samples: &[Vec<f64>]) -> Result<EntropyReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty coefficient histogram".into()));
    }
    let n = samples.len() as f64;
    let mut per_component = Vec::with_capacity(scheme.kept());
    for (i, q) in scheme.components.iter().enumerate() {
        let mut counts = vec![0usize; q.bins()];
        for s in samples {
            let x = *s.get(i).ok_or_else(|| Error::DimensionMismatch {
                expected: format!("at least {} coefficients", scheme.kept()),
                got: s.len().to_string(),
            })?;
            counts[q.quantize(x) as usize] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum();
        per_component.push(h.max(0.0));
    }
    let total = per_component.iter().sum();
    Ok(EntropyReport {
        per_component,
        total,
    })
}
