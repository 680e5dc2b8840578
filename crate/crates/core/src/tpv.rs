//! `.tpv` parameter files: one or more flat vectors with the analysis
//! configuration and group-index map they were produced under.

use std::path::Path;
use std::sync::Arc;

use crate::analysis::{AnalysisConfig, TextureParams};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::gaussianize::TransformedVector;
use crate::layout::Layout;

const MAGIC: &[u8; 4] = b"TTPV";
const VERSION: u32 = 1;

/// What the stored vectors are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    /// Native texture statistics.
    Native,
    /// Vectors in the unconstrained transformed space.
    Transformed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub kind: VectorKind,
    pub config: AnalysisConfig,
    pub lambda: f64,
    pub vectors: Vec<Vec<f64>>,
}

impl ParamFile {
    pub fn from_params(config: AnalysisConfig, params: &[TextureParams]) -> Result<ParamFile> {
        let layout = config.layout()?;
        for p in params {
            layout.check_len(p.len())?;
        }
        Ok(ParamFile {
            kind: VectorKind::Native,
            config,
            lambda: crate::gaussianize::LAMBDA,
            vectors: params.iter().map(|p| p.values.clone()).collect(),
        })
    }

    pub fn from_transformed(config: AnalysisConfig, vectors: &[TransformedVector]) -> Result<ParamFile> {
        let layout = config.layout()?;
        let lambda = vectors.first().map_or(crate::gaussianize::LAMBDA, |v| v.lambda);
        for v in vectors {
            layout.check_len(v.values.len())?;
            if v.lambda != lambda {
                return Err(Error::InvalidConfig("vectors mix modulus parameters".into()));
            }
        }
        Ok(ParamFile {
            kind: VectorKind::Transformed,
            config,
            lambda,
            vectors: vectors.iter().map(|v| v.values.clone()).collect(),
        })
    }

    fn layout(&self) -> Result<Arc<Layout>> {
        Ok(Arc::new(self.config.layout()?))
    }

    /// Native parameter sets; fails for transformed files.
    pub fn params(&self) -> Result<Vec<TextureParams>> {
        if self.kind != VectorKind::Native {
            return Err(Error::InvalidParams(
                "file holds transformed vectors, not native parameters".into(),
            ));
        }
        let layout = self.layout()?;
        self.vectors
            .iter()
            .map(|v| TextureParams::new(v.clone(), layout.clone()))
            .collect()
    }

    pub fn transformed(&self) -> Result<Vec<TransformedVector>> {
        if self.kind != VectorKind::Transformed {
            return Err(Error::InvalidParams(
                "file holds native parameters, not transformed vectors".into(),
            ));
        }
        let layout = self.layout()?;
        self.vectors
            .iter()
            .map(|v| TransformedVector::new(v.clone(), layout.clone(), self.lambda))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = self.config.layout()?;
        let mut w = Writer::new(MAGIC, VERSION);
        w.u8(match self.kind {
            VectorKind::Native => 0,
            VectorKind::Transformed => 1,
        });
        w.bytes(&serde_json::to_vec(&self.config)?);
        w.bytes(&layout.encode_blocks());
        w.f64(self.lambda);
        w.u64(self.vectors.len() as u64);
        w.u64(layout.len() as u64);
        for v in &self.vectors {
            layout.check_len(v.len())?;
            w.f64s(v);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(data: &[u8]) -> Result<ParamFile> {
        let (mut r, version) = Reader::open(data, MAGIC, "parameter file")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let kind = match r.u8()? {
            0 => VectorKind::Native,
            1 => VectorKind::Transformed,
            k => return Err(r.error(format!("unknown vector kind {k}"))),
        };
        let config: AnalysisConfig = serde_json::from_slice(r.bytes()?)?;
        config.validate()?;
        let layout = config.layout()?;
        layout.verify_blocks(r.bytes()?)?;
        let lambda = r.f64()?;
        let n = r.u64()? as usize;
        let d = r.u64()? as usize;
        layout.check_len(d)?;
        if n.checked_mul(d * 8).is_none_or(|b| b > data.len()) {
            return Err(r.error(format!("{n} vectors do not fit the file")));
        }
        let vectors = (0..n).map(|_| r.f64s(d)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(ParamFile {
            kind,
            config,
            lambda,
            vectors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamFile> {
        ParamFile::from_bytes(&std::fs::read(path)?)
    }
}
