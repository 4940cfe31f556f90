//! Embedding vectors supplied by external feature extractors, and the EEF
//! file format they arrive in.
//!
//! ```text
//! "EEF1" | u8 version=1 | u8 dtype (0 = f32 LE) | u16 reserved=0
//! u32 dim | [u8; 16] embedder_id | dim f32 LE
//! ```

use crate::error::{CodecError, Result};
use crate::wire::{self, Reader};

pub const EEF_MAGIC: &str = "EEF1";
pub const EEF_VERSION: u8 = 1;
pub const EEF_HEADER_LEN: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    embedder_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, embedder_id: impl Into<String>) -> Result<Self> {
        let embedder_id = embedder_id.into();
        if values.is_empty() {
            return Err(CodecError::InvalidArgument("embedding has dimension 0".into()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite { index });
        }
        wire::check_id(&embedder_id)?;
        Ok(Self { values, embedder_id })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect(), self.embedder_id.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(EEF_HEADER_LEN + 4 * self.dim());
        out.extend_from_slice(EEF_MAGIC.as_bytes());
        out.push(EEF_VERSION);
        out.push(0);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&wire::encode_id(&self.embedder_id)?);
        wire::put_f32s(&mut out, &self.values);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(EEF_MAGIC)?;
        let version = r.u8()?;
        if version != EEF_VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(CodecError::UnsupportedDtype(dtype));
        }
        let reserved = r.u16()?;
        if reserved != 0 {
            return Err(CodecError::UnsupportedField(format!("reserved = {reserved}")));
        }
        let dim = r.u32()? as usize;
        let id = r.id()?;
        let values = r.f32_vec(dim)?;
        r.finish()?;
        Self::new(values, id).map_err(|e| CodecError::UnsupportedField(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
