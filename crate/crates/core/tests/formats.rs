//! Byte-level contracts of the file formats shared with external tools.
//! Expected bytes were assembled independently with Python's `struct` and
//! `zlib.crc32`.

use latent_codec::container::{compress_image, read_container, write_container};
use latent_codec::{
    read_lif, write_lif, CodecError, Dictionary, EmbeddingVector, ImageBuffer, Int8Range, LatentLayout, LatentTensor,
    LinearCodecModel, QuantMode,
};

fn hex(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

#[test]
fn lif_golden_bytes() {
    let expected =
        hex("4c4946310100000002000000010000000100000008000000736431352d6c696b65000000000000000000803e000080bf");
    let t = LatentTensor::new(LatentLayout::new(8, 2, "sd15-like").unwrap(), 1, 1, vec![0.25, -1.0]).unwrap();
    assert_eq!(write_lif(&t).unwrap(), expected);
    assert_eq!(read_lif(&expected).unwrap(), t);
}

#[test]
fn eef_golden_bytes() {
    let expected = hex("454546310100000002000000756e69000000000000000000000000000000c03f000000c0");
    let e = EmbeddingVector::new(vec![1.5, -2.0], "uni").unwrap();
    assert_eq!(e.to_bytes().unwrap(), expected);
    assert_eq!(EmbeddingVector::from_bytes(&expected).unwrap(), e);
}

fn red_channel_model() -> LinearCodecModel {
    LinearCodecModel::new(LatentLayout::new(1, 1, "g").unwrap(), vec![0.0; 3], vec![1.0, 0.0, 0.0]).unwrap()
}

#[test]
fn plc1_golden_bytes() {
    let reds = [0u8, 128, 255, 51];
    let image = ImageBuffer::from_fn(2, 2, |y, x| [reds[y * 2 + x], 7, 9]).unwrap();
    let dict = Dictionary::Int8(Int8Range::new(0.0, 1.0).unwrap());
    let c = compress_image(&image, &red_channel_model(), QuantMode::StaticInt8, Some(&dict), 2).unwrap();
    let bytes = write_container(&c).unwrap();

    let mut expected = b"PLC1".to_vec();
    expected.extend_from_slice(&[1, 1, 0, 0]);
    for v in [1u32, 1, 2, 1, 1, 2, 2] {
        expected.extend_from_slice(&v.to_le_bytes());
    }
    expected.push(b'g');
    expected.extend_from_slice(&[0; 15]);
    expected.extend_from_slice(&0.0f32.to_le_bytes());
    expected.extend_from_slice(&1.0f32.to_le_bytes());
    // floor(r / 255 · 256), clamped to 255
    expected.extend_from_slice(&[0, 128, 255, 51]);
    expected.extend_from_slice(&0x1c6e_f941u32.to_le_bytes());
    assert_eq!(bytes, expected);
    assert_eq!(read_container(&bytes).unwrap(), c);
}

#[test]
fn plc1_truncation_names_the_tile() {
    let image = ImageBuffer::from_fn(6, 6, |y, x| [(y * 40) as u8, (x * 40) as u8, 0]).unwrap();
    let dict = Dictionary::Int8(Int8Range::new(-1.0, 1.0).unwrap());
    let c = compress_image(&image, &red_channel_model(), QuantMode::StaticInt8, Some(&dict), 2).unwrap();
    let bytes = write_container(&c).unwrap();
    // 9 tiles of 4 bytes after a 52-byte header and an 8-byte range; keep
    // tiles 0..=4 and half of tile 5
    let cut = 52 + 8 + 5 * 4 + 2;
    match read_container(&bytes[..cut]) {
        Err(CodecError::CorruptPayload { tile, expected, actual }) => {
            assert_eq!((tile, expected, actual), (5, 4, 2));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn plc1_rejects_post_filter_bit_and_bad_magic() {
    let image = ImageBuffer::filled(2, 2, [10, 20, 30]).unwrap();
    let c = compress_image(&image, &red_channel_model(), QuantMode::RawF32, None, 2).unwrap();
    let mut bytes = write_container(&c).unwrap();
    bytes[5] |= 0x80;
    let n = bytes.len();
    let crc = crc32(&bytes[..n - 4]);
    bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
    assert!(matches!(read_container(&bytes), Err(CodecError::UnsupportedField(_))));
    bytes[0] = b'X';
    assert!(matches!(read_container(&bytes), Err(CodecError::BadMagic { .. })));
}

/// Bitwise CRC-32 (IEEE, reflected), kept separate from the library's.
fn crc32(data: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn independent_crc_agrees_with_container_trailer() {
    let image = ImageBuffer::from_fn(5, 3, |y, x| [(y * 50) as u8, (x * 80) as u8, 3]).unwrap();
    let c = compress_image(&image, &red_channel_model(), QuantMode::RawF32, None, 2).unwrap();
    let bytes = write_container(&c).unwrap();
    let n = bytes.len();
    assert_eq!(crc32(&bytes[..n - 4]).to_le_bytes(), bytes[n - 4..]);
}
