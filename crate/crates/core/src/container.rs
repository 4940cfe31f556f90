//! Tiled compressed container (PLC1).
//!
//! An image is cut into `tile_size × tile_size` tiles in raster order. Each
//! tile is encoded and quantized on its own; tiles crossing the image border
//! are reflection-padded, so every tile payload has the same length. The
//! quantization dictionary is stored once and shared by all tiles.
//!
//! ```text
//! "PLC1" | u8 version=1 | u8 mode | u8 codebook scope | u8 reserved=0
//! u32 f | u32 c | u32 tile_size | u32 rows | u32 cols | u32 height | u32 width
//! [u8; 16] model_id
//! dictionary: none (raw) | f32 min, f32 max (int8) | units × 256 f32 (kmeans)
//! rows·cols tile payloads
//! u32 CRC-32 (IEEE) of everything above
//! ```

use rayon::prelude::*;

use crate::error::{CodecError, Result};
use crate::image::ImageBuffer;
use crate::latent::{latent_byte_size, LatentLayout, LatentTensor, QuantMode};
use crate::pca::LinearCodecModel;
use crate::quantizer::codebook::{Codebook, CodebookScope, CODEBOOK_SIZE};
use crate::quantizer::{dequantize, quantize, Dictionary, Int8Range, QuantizedLatent};
use crate::wire::{self, Reader};

pub const PLC_MAGIC: &str = "PLC1";
pub const PLC_VERSION: u8 = 1;
pub const PLC_HEADER_LEN: usize = 52;
pub const DEFAULT_TILE_SIZE: usize = 256;

// Reserved for a lossless post-filter stage; not implemented.
const MODE_POST_FILTER_BIT: u8 = 0x80;

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedContainer {
    pub version: u8,
    pub mode: QuantMode,
    pub layout: LatentLayout,
    pub tile_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub dictionary: Option<Dictionary>,
    /// One payload per tile, raster order.
    pub tiles: Vec<Vec<u8>>,
}

impl CompressedContainer {
    /// Latent grid side of a single tile.
    pub fn tile_grid(&self) -> usize {
        self.tile_size / self.layout.factor() as usize
    }

    pub fn tile_payload_len(&self) -> Result<usize> {
        let g = self.tile_grid();
        Ok(latent_byte_size(&self.layout, (g, g), self.mode)? as usize)
    }

    pub fn payload_bytes(&self) -> usize {
        self.tiles.iter().map(Vec::len).sum()
    }

    fn dictionary_len(&self) -> usize {
        match &self.dictionary {
            None => 0,
            Some(Dictionary::Int8(_)) => 8,
            Some(Dictionary::Kmeans(cb)) => cb.units() * CODEBOOK_SIZE * 4,
        }
    }

    /// Header, dictionary and checksum bytes.
    pub fn overhead_bytes(&self) -> usize {
        PLC_HEADER_LEN + self.dictionary_len() + 4
    }

    pub fn total_bytes(&self) -> usize {
        self.overhead_bytes() + self.payload_bytes()
    }

    /// Pixel rectangle `(top, left, height, width)` of tile `index`, clipped to the image.
    pub fn tile_rect(&self, index: usize) -> (usize, usize, usize, usize) {
        let (r, c) = (index / self.cols, index % self.cols);
        let (top, left) = (r * self.tile_size, c * self.tile_size);
        (
            top,
            left,
            self.tile_size.min(self.image_height - top),
            self.tile_size.min(self.image_width - left),
        )
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.version != PLC_VERSION {
            return Err(CodecError::UnsupportedVersion(self.version));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(CodecError::InvalidArgument(format!(
                "empty tile grid for a {}x{} image",
                self.image_width, self.image_height
            )));
        }
        check_tile_size(self.tile_size, &self.layout)?;
        let rows = self.image_height.div_ceil(self.tile_size);
        let cols = self.image_width.div_ceil(self.tile_size);
        if (rows, cols) != (self.rows, self.cols) {
            return Err(CodecError::DimensionMismatch(format!(
                "tile grid {}x{} does not cover a {}x{} image with {} px tiles",
                self.rows, self.cols, self.image_height, self.image_width, self.tile_size
            )));
        }
        check_dictionary(self.mode, self.dictionary.as_ref(), &self.layout)?;
        if self.tiles.len() != rows * cols {
            return Err(CodecError::CorruptPayload {
                tile: self.tiles.len().min(rows * cols),
                expected: self.tile_payload_len()?,
                actual: 0,
            });
        }
        let expected = self.tile_payload_len()?;
        if let Some((tile, t)) = self.tiles.iter().enumerate().find(|(_, t)| t.len() != expected) {
            return Err(CodecError::CorruptPayload {
                tile,
                expected,
                actual: t.len(),
            });
        }
        Ok(())
    }

    /// Dequantized latent of tile `index`.
    pub fn tile_latent(&self, index: usize) -> Result<LatentTensor> {
        let g = self.tile_grid();
        let payload = &self.tiles[index];
        let expected = self.tile_payload_len()?;
        if payload.len() != expected {
            return Err(CodecError::CorruptPayload {
                tile: index,
                expected,
                actual: payload.len(),
            });
        }
        match (&self.dictionary, self.mode) {
            (None, QuantMode::RawF32) => {
                LatentTensor::new(self.layout.clone(), g, g, wire::f32s_from_le(payload))
            }
            (Some(dict), mode) => {
                let q = QuantizedLatent::new(self.layout.clone(), g, g, payload.clone(), mode)?;
                dequantize(&q, dict)
            }
            (None, mode) => Err(CodecError::ModeMismatch(format!("{mode} container without dictionary"))),
        }
    }
}

fn check_tile_size(tile_size: usize, layout: &LatentLayout) -> Result<()> {
    let f = layout.factor() as usize;
    if tile_size == 0 || !tile_size.is_multiple_of(f) {
        return Err(CodecError::InvalidArgument(format!(
            "tile size {tile_size} is not a positive multiple of the downsample factor {f}"
        )));
    }
    Ok(())
}

fn check_dictionary(mode: QuantMode, dictionary: Option<&Dictionary>, layout: &LatentLayout) -> Result<()> {
    match (mode, dictionary) {
        (QuantMode::RawF32, None) => Ok(()),
        (QuantMode::StaticInt8, Some(Dictionary::Int8(_))) => Ok(()),
        (QuantMode::Kmeans8, Some(Dictionary::Kmeans(cb))) => cb.check_channels(layout.channels()),
        (mode, None) => Err(CodecError::ModeMismatch(format!("{mode} mode needs a dictionary"))),
        (mode, Some(d)) => Err(CodecError::ModeMismatch(format!(
            "{mode} mode given a {} dictionary",
            d.mode()
        ))),
    }
}

/// Encodes and quantizes `image` tile by tile with `model`.
pub fn compress_image(
    image: &ImageBuffer,
    model: &LinearCodecModel,
    mode: QuantMode,
    dictionary: Option<&Dictionary>,
    tile_size: usize,
) -> Result<CompressedContainer> {
    let layout = model.layout().clone();
    check_dictionary(mode, dictionary, &layout)?;
    check_tile_size(tile_size, &layout)?;
    let rows = image.height().div_ceil(tile_size);
    let cols = image.width().div_ceil(tile_size);

    let tiles = (0..rows * cols)
        .into_par_iter()
        .map(|index| {
            let (r, c) = (index / cols, index % cols);
            let region = image.region_reflect(r * tile_size, c * tile_size, tile_size, tile_size)?;
            let latent = model.encode(&region)?;
            Ok(match dictionary {
                None => {
                    let mut out = Vec::with_capacity(latent.values().len() * 4);
                    wire::put_f32s(&mut out, latent.values());
                    out
                }
                Some(d) => quantize(&latent, d)?.into_indices(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let container = CompressedContainer {
        version: PLC_VERSION,
        mode,
        layout,
        tile_size,
        rows,
        cols,
        image_height: image.height(),
        image_width: image.width(),
        dictionary: dictionary.cloned(),
        tiles,
    };
    container.validate()?;
    Ok(container)
}

fn check_model(container: &CompressedContainer, model: &LinearCodecModel) -> Result<()> {
    if model.layout() != &container.layout {
        return Err(CodecError::LayoutMismatch {
            expected: container.layout.to_string(),
            actual: model.layout().to_string(),
        });
    }
    Ok(())
}

/// Reconstruction of the pixels covered by tile `index`.
pub fn decompress_tile(container: &CompressedContainer, model: &LinearCodecModel, index: usize) -> Result<ImageBuffer> {
    check_model(container, model)?;
    decode_tile(container, model, index)
}

fn decode_tile(container: &CompressedContainer, model: &LinearCodecModel, index: usize) -> Result<ImageBuffer> {
    let (_, _, h, w) = container.tile_rect(index);
    let latent = container.tile_latent(index)?;
    model.decode(&latent, (h, w))
}

/// Dequantizes and decodes every tile, stitching them into the full image.
pub fn decompress_image(container: &CompressedContainer, model: &LinearCodecModel) -> Result<ImageBuffer> {
    check_model(container, model)?;
    container.validate()?;
    let tiles = (0..container.tiles.len())
        .into_par_iter()
        .map(|index| decode_tile(container, model, index))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ImageBuffer::filled(container.image_height, container.image_width, [0, 0, 0])?;
    for (index, tile) in tiles.iter().enumerate() {
        let (top, left, _, _) = container.tile_rect(index);
        out.paste(tile, top, left);
    }
    Ok(out)
}

/// Canonical byte serialization.
pub fn write_container(container: &CompressedContainer) -> Result<Vec<u8>> {
    container.validate()?;
    let u32_of = |v: usize| u32::try_from(v).map_err(|_| CodecError::SizeOverflow);
    let mut out = Vec::with_capacity(container.total_bytes());
    out.extend_from_slice(PLC_MAGIC.as_bytes());
    out.push(container.version);
    out.push(container.mode.code());
    out.push(match &container.dictionary {
        Some(Dictionary::Kmeans(cb)) => cb.scope().code(),
        _ => 0,
    });
    out.push(0);
    for v in [
        container.layout.factor() as usize,
        container.layout.channels() as usize,
        container.tile_size,
        container.rows,
        container.cols,
        container.image_height,
        container.image_width,
    ] {
        out.extend_from_slice(&u32_of(v)?.to_le_bytes());
    }
    out.extend_from_slice(&wire::encode_id(container.layout.model_id())?);
    match &container.dictionary {
        None => {}
        Some(Dictionary::Int8(r)) => r.write_block(&mut out),
        Some(Dictionary::Kmeans(cb)) => cb.write_tables(&mut out),
    }
    for t in &container.tiles {
        out.extend_from_slice(t);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Header {
    version: u8,
    mode_code: u8,
    scope_code: u8,
    reserved: u8,
    factor: u32,
    channels: u32,
    tile_size: u32,
    rows: u32,
    cols: u32,
    height: u32,
    width: u32,
    model_id: String,
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    Ok(Header {
        version: r.u8()?,
        mode_code: r.u8()?,
        scope_code: r.u8()?,
        reserved: r.u8()?,
        factor: r.u32()?,
        channels: r.u32()?,
        tile_size: r.u32()?,
        rows: r.u32()?,
        cols: r.u32()?,
        height: r.u32()?,
        width: r.u32()?,
        model_id: r.id()?,
    })
}

/// Byte lengths `(dictionary, tile)` implied by a header, if it is plausible.
fn implied_lengths(h: &Header) -> Option<(usize, usize)> {
    let mode = QuantMode::from_code(h.mode_code).ok()?;
    let dict = match mode {
        QuantMode::RawF32 => 0,
        QuantMode::StaticInt8 => 8,
        QuantMode::Kmeans8 => match CodebookScope::from_code(h.scope_code).ok()? {
            CodebookScope::Global => CODEBOOK_SIZE * 4,
            CodebookScope::PerChannel => (h.channels as usize).checked_mul(CODEBOOK_SIZE * 4)?,
        },
    };
    if h.factor == 0 || !h.tile_size.is_multiple_of(h.factor) {
        return None;
    }
    let g = (h.tile_size / h.factor) as usize;
    let tile = (h.channels as usize)
        .checked_mul(g.checked_mul(g)?)?
        .checked_mul(mode.bytes_per_value() as usize)?;
    Some((dict, tile))
}

pub fn read_container(bytes: &[u8]) -> Result<CompressedContainer> {
    let mut r = Reader::new(bytes);
    r.magic(PLC_MAGIC)?;
    if bytes.len() < PLC_HEADER_LEN + 4 {
        return Err(CodecError::TruncatedPayload {
            expected: PLC_HEADER_LEN + 4,
            actual: bytes.len(),
        });
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    let header = read_header(&mut r);

    if stored != computed {
        // a short file whose header is intact reads as a truncated tile
        if let Some((dict, tile)) = header.as_ref().ok().and_then(implied_lengths) {
            let header = header.as_ref().unwrap();
            let tiles = header.rows as usize * header.cols as usize;
            let start = PLC_HEADER_LEN + dict;
            let expected_len = tile
                .checked_mul(tiles)
                .and_then(|p| p.checked_add(start + 4));
            if let Some(expected_len) = expected_len {
                if bytes.len() < expected_len && tile > 0 && bytes.len() > start {
                    let have = bytes.len() - start;
                    let index = (have / tile).min(tiles.saturating_sub(1));
                    return Err(CodecError::CorruptPayload {
                        tile: index,
                        expected: tile,
                        actual: have - index * tile,
                    });
                }
                if bytes.len() < expected_len {
                    return Err(CodecError::TruncatedPayload {
                        expected: expected_len,
                        actual: bytes.len(),
                    });
                }
            }
        }
        return Err(CodecError::Checksum { stored, computed });
    }
    let header = header?;

    if header.version != PLC_VERSION {
        return Err(CodecError::UnsupportedVersion(header.version));
    }
    if header.mode_code & MODE_POST_FILTER_BIT != 0 {
        return Err(CodecError::UnsupportedField("post-filter stage is not supported".into()));
    }
    if header.reserved != 0 {
        return Err(CodecError::UnsupportedField(format!("reserved = {}", header.reserved)));
    }
    let mode = QuantMode::from_code(header.mode_code)?;
    let layout = LatentLayout::new(header.factor, header.channels, header.model_id)
        .map_err(|e| CodecError::UnsupportedField(e.to_string()))?;
    let tile_size = header.tile_size as usize;
    check_tile_size(tile_size, &layout).map_err(|e| CodecError::UnsupportedField(e.to_string()))?;

    let dictionary = match mode {
        QuantMode::RawF32 => {
            if header.scope_code != 0 {
                return Err(CodecError::UnsupportedField(format!("scope {} in raw mode", header.scope_code)));
            }
            None
        }
        QuantMode::StaticInt8 => {
            if header.scope_code != 0 {
                return Err(CodecError::UnsupportedField(format!("scope {} in int8 mode", header.scope_code)));
            }
            Some(Dictionary::Int8(Int8Range::read_block(&mut r)?))
        }
        QuantMode::Kmeans8 => {
            let scope = CodebookScope::from_code(header.scope_code)?;
            let channels = match scope {
                CodebookScope::Global => 1,
                CodebookScope::PerChannel => header.channels,
            };
            Some(Dictionary::Kmeans(Codebook::read_tables(&mut r, scope, channels, 0)?))
        }
    };

    let mut container = CompressedContainer {
        version: header.version,
        mode,
        layout,
        tile_size,
        rows: header.rows as usize,
        cols: header.cols as usize,
        image_height: header.height as usize,
        image_width: header.width as usize,
        dictionary,
        tiles: Vec::new(),
    };
    let tile_len = container.tile_payload_len()?;
    let count = container
        .rows
        .checked_mul(container.cols)
        .ok_or(CodecError::SizeOverflow)?;
    let available = r.remaining() - 4;
    if count.checked_mul(tile_len) != Some(available) {
        return Err(CodecError::UnsupportedField(format!(
            "{available} payload bytes for {count} tiles of {tile_len} bytes"
        )));
    }
    container.tiles = (0..count).map(|_| r.take(tile_len).map(<[u8]>::to_vec)).collect::<Result<_>>()?;
    r.take(4)?;
    r.finish()?;
    container
        .validate()
        .map_err(|e| match e {
            CodecError::InvalidArgument(m) | CodecError::DimensionMismatch(m) => CodecError::UnsupportedField(m),
            other => other,
        })?;
    Ok(container)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::{fit_linear_codec, DEFAULT_MAX_PATCHES};
    use crate::quantizer::{calibrate_int8_range, fit_codebook, KMeansParams};
    use crate::synthetic;

    fn model(layout: LatentLayout) -> LinearCodecModel {
        let imgs: Vec<_> = (0..2).map(|i| synthetic::tissue_tile(i, 96, 96)).collect();
        fit_linear_codec(&imgs, layout, 0, DEFAULT_MAX_PATCHES).unwrap()
    }

    fn dictionaries(m: &LinearCodecModel) -> (Dictionary, Dictionary) {
        let lat = m.encode(&synthetic::tissue_tile(50, 128, 128)).unwrap();
        let cb = fit_codebook(std::slice::from_ref(&lat), &KMeansParams::default()).unwrap().codebook;
        let r = calibrate_int8_range(&[lat]).unwrap();
        (Dictionary::Kmeans(cb), Dictionary::Int8(r))
    }

    #[test]
    fn sd15_single_tile_payload() {
        let m = model(LatentLayout::sd15_like());
        let (km, _) = dictionaries(&m);
        let img = synthetic::tissue_tile(9, 256, 256);
        let c = compress_image(&img, &m, QuantMode::Kmeans8, Some(&km), 256).unwrap();
        assert_eq!(c.payload_bytes(), 4096);
        assert!(c.overhead_bytes() < 1200);
        assert_eq!(write_container(&c).unwrap().len(), c.total_bytes());
    }

    #[test]
    fn mode_dictionary_mismatch() {
        let m = model(LatentLayout::sd15_like());
        let (km, i8) = dictionaries(&m);
        let img = synthetic::tissue_tile(9, 64, 64);
        for (mode, d) in [
            (QuantMode::Kmeans8, Some(&i8)),
            (QuantMode::StaticInt8, Some(&km)),
            (QuantMode::RawF32, Some(&km)),
            (QuantMode::Kmeans8, None),
        ] {
            assert!(matches!(
                compress_image(&img, &m, mode, d, 64),
                Err(CodecError::ModeMismatch(_))
            ));
        }
        assert!(matches!(
            compress_image(&img, &m, QuantMode::RawF32, None, 60),
            Err(CodecError::InvalidArgument(_))
        ));
    }

    #[test]
    fn border_tiles_and_tile_independence() {
        let m = model(LatentLayout::sd15_like());
        let (km, _) = dictionaries(&m);
        let img = synthetic::tissue_tile(3, 150, 200);
        let c = compress_image(&img, &m, QuantMode::Kmeans8, Some(&km), 64).unwrap();
        assert_eq!((c.rows, c.cols), (3, 4));
        let full = decompress_image(&c, &m).unwrap();
        assert_eq!(full.dims(), (150, 200));
        for index in 0..c.tiles.len() {
            let (top, left, h, w) = c.tile_rect(index);
            let tile = decompress_tile(&c, &m, index).unwrap();
            assert_eq!(tile, full.crop(top, left, h, w).unwrap());
        }
    }

    #[test]
    fn truncated_tile_is_named() {
        let m = model(LatentLayout::sd15_like());
        let img = synthetic::tissue_tile(3, 128, 128);
        let mut c = compress_image(&img, &m, QuantMode::RawF32, None, 64).unwrap();
        let bytes = write_container(&c).unwrap();
        c.tiles[3].truncate(100);
        assert!(matches!(
            decompress_image(&c, &m),
            Err(CodecError::CorruptPayload { tile: 3, actual: 100, .. })
        ));
        let cut = &bytes[..bytes.len() - 4 - 50];
        assert!(matches!(read_container(cut), Err(CodecError::CorruptPayload { tile: 3, .. })));
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let m = model(LatentLayout::sd15_like());
        let (_, i8) = dictionaries(&m);
        let img = synthetic::tissue_tile(3, 64, 64);
        let c = compress_image(&img, &m, QuantMode::StaticInt8, Some(&i8), 64).unwrap();
        let mut bytes = write_container(&c).unwrap();
        assert_eq!(read_container(&bytes).unwrap(), c);
        bytes[PLC_HEADER_LEN + 8 + 10] ^= 0x01;
        assert!(matches!(read_container(&bytes), Err(CodecError::Checksum { .. })));
    }

    #[test]
    fn empty_grid_rejected_at_write() {
        let c = CompressedContainer {
            version: PLC_VERSION,
            mode: QuantMode::RawF32,
            layout: LatentLayout::sd15_like(),
            tile_size: 256,
            rows: 0,
            cols: 0,
            image_height: 0,
            image_width: 0,
            dictionary: None,
            tiles: vec![],
        };
        assert!(matches!(write_container(&c), Err(CodecError::InvalidArgument(_))));
    }

    #[test]
    fn layout_mismatch_on_decompress() {
        let m = model(LatentLayout::sd15_like());
        let other = model(LatentLayout::new(8, 4, "other").unwrap());
        let img = synthetic::tissue_tile(3, 64, 64);
        let c = compress_image(&img, &m, QuantMode::RawF32, None, 64).unwrap();
        assert!(matches!(decompress_image(&c, &other), Err(CodecError::LayoutMismatch { .. })));
    }
}
