//! Latent quantizers: learned K-means codebooks and static int8 binning.

pub mod codebook;
pub mod int8;
pub mod lloyd;

pub use codebook::{fit_codebook, Codebook, CodebookFit, CodebookScope, KMeansParams, UnitFitStats};
pub use int8::{calibrate_int8_range, Int8Range};

use crate::error::{CodecError, Result};
use crate::latent::{LatentLayout, LatentTensor, QuantMode};

/// Shared quantization dictionary: a codebook or an int8 range.
#[derive(Debug, Clone, PartialEq)]
pub enum Dictionary {
    Kmeans(Codebook),
    Int8(Int8Range),
}

impl Dictionary {
    pub fn mode(&self) -> QuantMode {
        match self {
            Dictionary::Kmeans(_) => QuantMode::Kmeans8,
            Dictionary::Int8(_) => QuantMode::StaticInt8,
        }
    }
}

/// 8-bit indices for a latent grid plus the mode that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLatent {
    layout: LatentLayout,
    height: usize,
    width: usize,
    indices: Vec<u8>,
    mode: QuantMode,
}

impl QuantizedLatent {
    pub fn new(layout: LatentLayout, height: usize, width: usize, indices: Vec<u8>, mode: QuantMode) -> Result<Self> {
        if mode == QuantMode::RawF32 {
            return Err(CodecError::ModeMismatch("raw-f32 latents carry no indices".into()));
        }
        let expected = layout.channels() as usize * height * width;
        if indices.len() != expected {
            return Err(CodecError::ShapeMismatch {
                expected,
                actual: indices.len(),
            });
        }
        Ok(Self {
            layout,
            height,
            width,
            indices,
            mode,
        })
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn into_indices(self) -> Vec<u8> {
        self.indices
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }
}

/// Replaces every value with the index of its nearest centroid.
pub fn quantize_kmeans(latent: &LatentTensor, codebook: &Codebook) -> Result<QuantizedLatent> {
    codebook.check_channels(latent.layout().channels())?;
    let plane = latent.height() * latent.width();
    let mut indices = Vec::with_capacity(latent.values().len());
    for c in 0..latent.channels() {
        let unit = codebook.unit_for_channel(c);
        for (i, &v) in latent.channel(c).iter().enumerate() {
            if !v.is_finite() {
                return Err(CodecError::NonFinite { index: c * plane + i });
            }
            indices.push(codebook.assign(unit, v));
        }
    }
    QuantizedLatent::new(
        latent.layout().clone(),
        latent.height(),
        latent.width(),
        indices,
        QuantMode::Kmeans8,
    )
}

pub fn quantize_int8(latent: &LatentTensor, range: &Int8Range) -> Result<QuantizedLatent> {
    let indices = latent
        .values()
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            if v.is_finite() {
                Ok(range.quantize(v))
            } else {
                Err(CodecError::NonFinite { index })
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    QuantizedLatent::new(
        latent.layout().clone(),
        latent.height(),
        latent.width(),
        indices,
        QuantMode::StaticInt8,
    )
}

pub fn quantize(latent: &LatentTensor, dictionary: &Dictionary) -> Result<QuantizedLatent> {
    match dictionary {
        Dictionary::Kmeans(cb) => quantize_kmeans(latent, cb),
        Dictionary::Int8(r) => quantize_int8(latent, r),
    }
}

/// Maps indices back to centroids or bin midpoints.
pub fn dequantize(q: &QuantizedLatent, dictionary: &Dictionary) -> Result<LatentTensor> {
    if q.mode != dictionary.mode() {
        return Err(CodecError::ModeMismatch(format!(
            "{} indices with a {} dictionary",
            q.mode,
            dictionary.mode()
        )));
    }
    let values = match dictionary {
        Dictionary::Kmeans(cb) => {
            cb.check_channels(q.layout.channels())?;
            let plane = q.height * q.width;
            q.indices
                .iter()
                .enumerate()
                .map(|(i, &idx)| cb.centroids(cb.unit_for_channel(i / plane))[idx as usize])
                .collect()
        }
        Dictionary::Int8(r) => q.indices.iter().map(|&idx| r.dequantize(idx)).collect(),
    };
    LatentTensor::new(q.layout.clone(), q.height, q.width, values)
}
