//! Latent grid data model and the size arithmetic behind the codec's rate figures.
//!
//! A latent is a `channels × height × width` grid of `f32` activations stored
//! channel-major, so each channel is a contiguous slice.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CodecError, Result};
use crate::wire;

pub const MAX_FACTOR: u32 = 256;
pub const MAX_CHANNELS: u32 = 1024;

/// Spatial downsample factor, channel count and model identifier of a latent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentLayout {
    factor: u32,
    channels: u32,
    model_id: String,
}

impl LatentLayout {
    pub fn new(factor: u32, channels: u32, model_id: impl Into<String>) -> Result<Self> {
        let model_id = model_id.into();
        if !(1..=MAX_FACTOR).contains(&factor) {
            return Err(CodecError::InvalidLayout(format!(
                "factor {factor} outside 1..={MAX_FACTOR}"
            )));
        }
        if !(1..=MAX_CHANNELS).contains(&channels) {
            return Err(CodecError::InvalidLayout(format!(
                "channels {channels} outside 1..={MAX_CHANNELS}"
            )));
        }
        wire::check_id(&model_id)?;
        Ok(Self {
            factor,
            channels,
            model_id,
        })
    }

    /// f8c4, the SD-1.5 autoencoder shape.
    pub fn sd15_like() -> Self {
        Self::new(8, 4, "sd15-like").unwrap()
    }

    /// f8c16, the SD-3 autoencoder shape.
    pub fn sd3_like() -> Self {
        Self::new(8, 16, "sd3-like").unwrap()
    }

    /// f32c32, the DC-AE-f32 autoencoder shape.
    pub fn dcae_like() -> Self {
        Self::new(32, 32, "dcae-like").unwrap()
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "sd15-like" => Some(Self::sd15_like()),
            "sd3-like" => Some(Self::sd3_like()),
            "dcae-like" => Some(Self::dcae_like()),
            _ => None,
        }
    }

    pub fn factor(&self) -> u32 {
        self.factor
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Same `(f, c)` regardless of model id.
    pub fn same_shape(&self, other: &LatentLayout) -> bool {
        self.factor == other.factor && self.channels == other.channels
    }

    /// Length of a vectorized RGB patch, `3·f²`.
    pub fn patch_dim(&self) -> usize {
        3 * (self.factor as usize).pow(2)
    }
}

impl fmt::Display for LatentLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}c{} ({})", self.factor, self.channels, self.model_id)
    }
}

/// Storage mode of latent values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantMode {
    RawF32,
    StaticInt8,
    Kmeans8,
}

impl QuantMode {
    pub fn bytes_per_value(self) -> u64 {
        match self {
            QuantMode::RawF32 => 4,
            QuantMode::StaticInt8 | QuantMode::Kmeans8 => 1,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            QuantMode::RawF32 => 0,
            QuantMode::StaticInt8 => 1,
            QuantMode::Kmeans8 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(QuantMode::RawF32),
            1 => Ok(QuantMode::StaticInt8),
            2 => Ok(QuantMode::Kmeans8),
            other => Err(CodecError::UnsupportedField(format!("quant mode {other}"))),
        }
    }

    /// Short name used on the command line and in reports.
    pub fn label(self) -> &'static str {
        match self {
            QuantMode::RawF32 => "raw",
            QuantMode::StaticInt8 => "int8",
            QuantMode::Kmeans8 => "kmeans",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "raw" | "raw-f32" => Some(QuantMode::RawF32),
            "int8" | "static-int8" => Some(QuantMode::StaticInt8),
            "kmeans" | "kmeans-8bit" => Some(QuantMode::Kmeans8),
            _ => None,
        }
    }
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Payload bytes of a `c × h × w` latent in the given mode, excluding any
/// container header or dictionary.
pub fn latent_byte_size(layout: &LatentLayout, grid: (usize, usize), mode: QuantMode) -> Result<u64> {
    let (h, w) = grid;
    if h == 0 || w == 0 {
        return Err(CodecError::InvalidArgument(format!(
            "latent grid {h}x{w} has zero area"
        )));
    }
    (layout.channels as u64)
        .checked_mul(h as u64)
        .and_then(|v| v.checked_mul(w as u64))
        .and_then(|v| v.checked_mul(mode.bytes_per_value()))
        .ok_or(CodecError::SizeOverflow)
}

/// Ceiling-divided latent grid `(h, w)` for an `H × W` pixel image.
pub fn latent_grid_for_image(layout: &LatentLayout, image_dims: (usize, usize)) -> (usize, usize) {
    let f = layout.factor as usize;
    (image_dims.0.div_ceil(f), image_dims.1.div_ceil(f))
}

/// A latent grid with its layout. Values are finite and channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    layout: LatentLayout,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl LatentTensor {
    pub fn new(layout: LatentLayout, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CodecError::InvalidArgument(format!(
                "latent grid {height}x{width} has zero area"
            )));
        }
        let expected = (layout.channels as usize)
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or(CodecError::SizeOverflow)?;
        if values.len() != expected {
            return Err(CodecError::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite { index });
        }
        Ok(Self {
            layout,
            height,
            width,
            values,
        })
    }

    pub fn zeros(layout: LatentLayout, height: usize, width: usize) -> Result<Self> {
        let n = layout.channels as usize * height * width;
        Self::new(layout, height, width, vec![0.0; n])
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.layout.channels as usize
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.values[(c * self.height + row) * self.width + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sizes() {
        let raw = QuantMode::RawF32;
        let q = QuantMode::Kmeans8;
        assert_eq!(latent_byte_size(&LatentLayout::sd15_like(), (32, 32), raw).unwrap(), 16384);
        assert_eq!(latent_byte_size(&LatentLayout::sd15_like(), (32, 32), q).unwrap(), 4096);
        assert_eq!(latent_byte_size(&LatentLayout::sd3_like(), (32, 32), raw).unwrap(), 65536);
        assert_eq!(latent_byte_size(&LatentLayout::sd3_like(), (32, 32), q).unwrap(), 16384);
        assert_eq!(latent_byte_size(&LatentLayout::dcae_like(), (8, 8), raw).unwrap(), 8192);
        assert_eq!(latent_byte_size(&LatentLayout::dcae_like(), (8, 8), q).unwrap(), 2048);
        assert_eq!(
            latent_byte_size(&LatentLayout::dcae_like(), (8, 8), QuantMode::StaticInt8).unwrap(),
            2048
        );
    }

    #[test]
    fn zero_area_and_overflow() {
        let l = LatentLayout::sd15_like();
        assert!(matches!(
            latent_byte_size(&l, (0, 32), QuantMode::RawF32),
            Err(CodecError::InvalidArgument(_))
        ));
        let big = LatentLayout::new(1, 1024, "x").unwrap();
        assert!(matches!(
            latent_byte_size(&big, (usize::MAX / 2, usize::MAX / 2), QuantMode::RawF32),
            Err(CodecError::SizeOverflow)
        ));
    }

    #[test]
    fn grids() {
        let f8 = LatentLayout::sd15_like();
        let f32_ = LatentLayout::dcae_like();
        assert_eq!(latent_grid_for_image(&f8, (256, 256)), (32, 32));
        assert_eq!(latent_grid_for_image(&f32_, (256, 256)), (8, 8));
        assert_eq!(latent_grid_for_image(&f8, (260, 256)), (33, 32));
    }

    #[test]
    fn layout_validation() {
        assert!(LatentLayout::new(0, 4, "a").is_err());
        assert!(LatentLayout::new(257, 4, "a").is_err());
        assert!(LatentLayout::new(8, 0, "a").is_err());
        assert!(LatentLayout::new(8, 1025, "a").is_err());
        assert!(LatentLayout::new(8, 4, "seventeen-bytes!!").is_err());
        assert!(LatentLayout::new(8, 4, "sixteen-bytes-ok").is_ok());
        assert_eq!(LatentLayout::preset("dcae-like").unwrap().factor(), 32);
        assert!(LatentLayout::preset("vq-f16").is_none());
    }

    #[test]
    fn tensor_rejects_bad_values() {
        let l = LatentLayout::sd15_like();
        assert!(matches!(
            LatentTensor::new(l.clone(), 2, 2, vec![0.0; 15]),
            Err(CodecError::ShapeMismatch { expected: 16, actual: 15 })
        ));
        let mut v = vec![0.0; 16];
        v[5] = f32::NAN;
        assert!(matches!(
            LatentTensor::new(l, 2, 2, v),
            Err(CodecError::NonFinite { index: 5 })
        ));
    }

    proptest::proptest! {
        #[test]
        fn quantized_is_quarter_of_raw(c in 1u32..=1024, h in 1usize..4096, w in 1usize..4096) {
            let l = LatentLayout::new(8, c, "p").unwrap();
            let raw = latent_byte_size(&l, (h, w), QuantMode::RawF32).unwrap();
            let q = latent_byte_size(&l, (h, w), QuantMode::Kmeans8).unwrap();
            proptest::prop_assert_eq!(raw, 4 * q);
        }

        #[test]
        fn grid_is_monotone(f in 1u32..=256, h in 1usize..5000, w in 1usize..5000, dh in 0usize..300, dw in 0usize..300) {
            let l = LatentLayout::new(f, 1, "p").unwrap();
            let a = latent_grid_for_image(&l, (h, w));
            let b = latent_grid_for_image(&l, (h + dh, w + dw));
            proptest::prop_assert!(b.0 >= a.0 && b.1 >= a.1);
        }
    }
}
