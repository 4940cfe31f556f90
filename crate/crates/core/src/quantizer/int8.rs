//! Static int8 quantization: the calibrated value range split into 256 equal bins.

use crate::error::{CodecError, Result};
use crate::latent::LatentTensor;
use crate::wire::Reader;

pub const I8R_MAGIC: &str = "I8R1";

/// Calibration range for uniform 8-bit binning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Int8Range {
    min: f32,
    max: f32,
}

impl Int8Range {
    pub fn new(min: f32, max: f32) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || max <= min {
            return Err(CodecError::DegenerateRange { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> f32 {
        self.min
    }

    pub fn max(&self) -> f32 {
        self.max
    }

    pub fn bin_width(&self) -> f64 {
        (self.max as f64 - self.min as f64) / 256.0
    }

    #[inline]
    pub fn quantize(&self, value: f32) -> u8 {
        let bin = ((value as f64 - self.min as f64) / self.bin_width()).floor();
        bin.clamp(0.0, 255.0) as u8
    }

    /// Midpoint of bin `index`.
    #[inline]
    pub fn dequantize(&self, index: u8) -> f32 {
        (self.min as f64 + (index as f64 + 0.5) * self.bin_width()) as f32
    }

    /// 8-byte block embedded in containers: `f32 min | f32 max`.
    pub(crate) fn write_block(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.min.to_le_bytes());
        out.extend_from_slice(&self.max.to_le_bytes());
    }

    pub(crate) fn read_block(r: &mut Reader<'_>) -> Result<Self> {
        let min = r.f32()?;
        let max = r.f32()?;
        Self::new(min, max).map_err(|e| CodecError::UnsupportedField(e.to_string()))
    }

    /// Standalone file: `"I8R1" | f32 min | f32 max`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = I8R_MAGIC.as_bytes().to_vec();
        self.write_block(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(I8R_MAGIC)?;
        let range = Self::read_block(&mut r)?;
        r.finish()?;
        Ok(range)
    }
}

/// Range `[−m, m]` where `m` is the largest magnitude in `samples`.
pub fn calibrate_int8_range(samples: &[LatentTensor]) -> Result<Int8Range> {
    if samples.is_empty() {
        return Err(CodecError::EmptySamples);
    }
    let m = samples
        .iter()
        .flat_map(|s| s.values())
        .fold(0.0f32, |acc, v| acc.max(v.abs()));
    Int8Range::new(-m, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentLayout;

    fn tensor(values: Vec<f32>) -> LatentTensor {
        let n = values.len();
        LatentTensor::new(LatentLayout::new(8, 1, "t").unwrap(), 1, n, values).unwrap()
    }

    #[test]
    fn zero_maps_to_bin_128() {
        let r = Int8Range::new(-1.0, 1.0).unwrap();
        assert_eq!(r.quantize(0.0), 128);
        assert_eq!(r.dequantize(128), 0.00390625);
    }

    #[test]
    fn boundaries_clamp() {
        let r = Int8Range::new(-1.0, 1.0).unwrap();
        assert_eq!(r.quantize(-1.0), 0);
        assert_eq!(r.quantize(-7.0), 0);
        assert_eq!(r.quantize(1.0), 255);
        assert_eq!(r.quantize(3.0), 255);
    }

    #[test]
    fn calibration_symmetrizes() {
        let r = calibrate_int8_range(&[tensor(vec![-0.8, 0.1]), tensor(vec![0.5])]).unwrap();
        assert_eq!((r.min(), r.max()), (-0.8, 0.8));
        let r = calibrate_int8_range(&[tensor(vec![2.0])]).unwrap();
        assert_eq!((r.min(), r.max()), (-2.0, 2.0));
        assert!(matches!(
            calibrate_int8_range(&[tensor(vec![0.0; 4])]),
            Err(CodecError::DegenerateRange { .. })
        ));
        assert!(matches!(calibrate_int8_range(&[]), Err(CodecError::EmptySamples)));
    }

    #[test]
    fn file_roundtrip() {
        let r = Int8Range::new(-3.25, 3.25).unwrap();
        assert_eq!(Int8Range::from_bytes(&r.to_bytes()).unwrap(), r);
        assert!(Int8Range::from_bytes(b"I8R1\0\0\0\0\0\0\0\0").is_err());
    }

    proptest::proptest! {
        #[test]
        fn midpoint_reconstruction_bound(lo in -100.0f32..0.0, span in 0.01f32..200.0, t in 0.0f64..=1.0) {
            let r = Int8Range::new(lo, lo + span).unwrap();
            let v = (r.min() as f64 + t * (r.max() as f64 - r.min() as f64)) as f32;
            let err = (r.dequantize(r.quantize(v)) as f64 - v as f64).abs();
            // f32 rounding of the midpoint and of v itself adds a few ulps
            let slack = 4.0 * f32::EPSILON as f64 * (r.max().abs().max(r.min().abs()) as f64);
            proptest::prop_assert!(err <= r.bin_width() / 2.0 + slack, "err {err} bw {}", r.bin_width());
        }
    }
}
