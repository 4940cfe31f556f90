//! Little-endian helpers shared by the binary formats.

use crate::error::{CodecError, Result};

/// Length of the fixed, zero-padded identifier fields.
pub const ID_LEN: usize = 16;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CodecError::TruncatedPayload {
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &'static str) -> Result<()> {
        let raw = self.take(4)?;
        if raw != expected.as_bytes() {
            let mut found = [0u8; 4];
            found.copy_from_slice(raw);
            return Err(CodecError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or(CodecError::SizeOverflow)?)?;
        Ok(f32s_from_le(raw))
    }

    pub fn id(&mut self) -> Result<String> {
        decode_id(self.take(ID_LEN)?)
    }

    pub fn finish(&self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn f32s_from_le(raw: &[u8]) -> Vec<f32> {
    raw.chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub(crate) fn encode_id(id: &str) -> Result<[u8; ID_LEN]> {
    check_id(id)?;
    let mut out = [0u8; ID_LEN];
    out[..id.len()].copy_from_slice(id.as_bytes());
    Ok(out)
}

pub(crate) fn check_id(id: &str) -> Result<()> {
    if id.len() > ID_LEN {
        return Err(CodecError::InvalidLayout(format!(
            "identifier {id:?} exceeds {ID_LEN} bytes"
        )));
    }
    if id.bytes().any(|b| b == 0) {
        return Err(CodecError::InvalidLayout(format!(
            "identifier {id:?} contains NUL"
        )));
    }
    Ok(())
}

fn decode_id(raw: &[u8]) -> Result<String> {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    if raw[end..].iter().any(|&b| b != 0) {
        return Err(CodecError::UnsupportedField(
            "identifier has bytes after its NUL padding".into(),
        ));
    }
    String::from_utf8(raw[..end].to_vec())
        .map_err(|_| CodecError::UnsupportedField("identifier is not UTF-8".into()))
}
