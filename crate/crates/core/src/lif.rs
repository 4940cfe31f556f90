//! Latent Interchange Format (LIF), the file external encoders write latents into.
//!
//! ```text
//! "LIF1" | u8 version=1 | u8 dtype (0 = f32 LE) | u16 reserved=0
//! u32 channels | u32 height | u32 width | u32 factor | [u8; 16] model_id
//! channels·height·width f32 LE, channel-major
//! ```

use crate::error::{CodecError, Result};
use crate::latent::{LatentLayout, LatentTensor};
use crate::wire::{self, Reader};

pub const LIF_MAGIC: &str = "LIF1";
pub const LIF_VERSION: u8 = 1;
pub const LIF_DTYPE_F32: u8 = 0;
pub const LIF_HEADER_LEN: usize = 40;

pub fn write_lif(tensor: &LatentTensor) -> Result<Vec<u8>> {
    write_lif_parts(tensor.layout(), tensor.height(), tensor.width(), tensor.values())
}

/// Serializes a latent given as loose parts, e.g. straight from an encoder
/// output buffer that has not been validated as a [`LatentTensor`].
pub fn write_lif_parts(
    layout: &LatentLayout,
    height: usize,
    width: usize,
    values: &[f32],
) -> Result<Vec<u8>> {
    let expected = layout.channels() as usize * height * width;
    if values.len() != expected {
        return Err(CodecError::ShapeMismatch {
            expected,
            actual: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite { index });
    }
    let mut out = Vec::with_capacity(LIF_HEADER_LEN + values.len() * 4);
    out.extend_from_slice(LIF_MAGIC.as_bytes());
    out.push(LIF_VERSION);
    out.push(LIF_DTYPE_F32);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&layout.channels().to_le_bytes());
    out.extend_from_slice(&dim_u32(height)?.to_le_bytes());
    out.extend_from_slice(&dim_u32(width)?.to_le_bytes());
    out.extend_from_slice(&layout.factor().to_le_bytes());
    out.extend_from_slice(&wire::encode_id(layout.model_id())?);
    wire::put_f32s(&mut out, values);
    Ok(out)
}

pub fn read_lif(bytes: &[u8]) -> Result<LatentTensor> {
    let mut r = Reader::new(bytes);
    r.magic(LIF_MAGIC)?;
    let version = r.u8()?;
    if version != LIF_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let dtype = r.u8()?;
    if dtype != LIF_DTYPE_F32 {
        return Err(CodecError::UnsupportedDtype(dtype));
    }
    let reserved = r.u16()?;
    if reserved != 0 {
        return Err(CodecError::UnsupportedField(format!("reserved = {reserved}")));
    }
    let channels = r.u32()?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let factor = r.u32()?;
    let model_id = r.id()?;
    let layout = LatentLayout::new(factor, channels, model_id)
        .map_err(|e| CodecError::UnsupportedField(e.to_string()))?;
    let count = (channels as usize)
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or(CodecError::SizeOverflow)?;
    let values = r.f32_vec(count)?;
    r.finish()?;
    LatentTensor::new(layout, height, width, values)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| CodecError::SizeOverflow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zeros() -> LatentTensor {
        LatentTensor::zeros(LatentLayout::sd15_like(), 2, 2).unwrap()
    }

    #[test]
    fn zero_tensor_roundtrip() {
        let t = zeros();
        let bytes = write_lif(&t).unwrap();
        assert_eq!(bytes.len(), LIF_HEADER_LEN + 16 * 4);
        assert_eq!(read_lif(&bytes).unwrap(), t);
    }

    #[test]
    fn header_only_is_truncated() {
        let bytes = write_lif(&zeros()).unwrap();
        assert!(matches!(
            read_lif(&bytes[..LIF_HEADER_LEN]),
            Err(CodecError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn distinct_header_errors() {
        let good = write_lif(&zeros()).unwrap();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(read_lif(&b), Err(CodecError::BadMagic { .. })));
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(read_lif(&b), Err(CodecError::UnsupportedVersion(2))));
        let mut b = good.clone();
        b[5] = 1;
        assert!(matches!(read_lif(&b), Err(CodecError::UnsupportedDtype(1))));
        let mut b = good;
        b.push(0);
        assert!(matches!(read_lif(&b), Err(CodecError::TrailingBytes(1))));
    }

    #[test]
    fn nan_is_refused_on_write() {
        let mut values = vec![0.0f32; 16];
        values[3] = f32::NAN;
        assert!(matches!(
            write_lif_parts(&LatentLayout::sd15_like(), 2, 2, &values),
            Err(CodecError::NonFinite { index: 3 })
        ));
    }

    #[test]
    fn nan_is_refused_on_read() {
        let mut bytes = write_lif(&zeros()).unwrap();
        bytes[LIF_HEADER_LEN..LIF_HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_lif(&bytes), Err(CodecError::NonFinite { index: 0 })));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            c in 1u32..6, h in 1usize..6, w in 1usize..6,
            seed in proptest::collection::vec(-1e30f32..1e30, 150)
        ) {
            let n = c as usize * h * w;
            let layout = LatentLayout::new(8, c, "prop").unwrap();
            let t = LatentTensor::new(layout, h, w, seed[..n].to_vec()).unwrap();
            let bytes = write_lif(&t).unwrap();
            let back = read_lif(&bytes).unwrap();
            prop_assert_eq!(write_lif(&back).unwrap(), bytes);
            prop_assert!(back.values().iter().zip(t.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
