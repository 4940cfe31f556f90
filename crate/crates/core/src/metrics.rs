//! Rate-distortion measurement: PSNR, SSIM, embedding-space similarity, and
//! report assembly.

use serde::{Serialize, Serializer};

use crate::container::CompressedContainer;
use crate::embedding::EmbeddingVector;
use crate::error::{CodecError, Result};
use crate::image::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const DATA_RANGE: f64 = 255.0;

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(CodecError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(reference: &ImageBuffer, test: &ImageBuffer) -> Result<f64> {
    check_dims(reference, test)?;
    let sum: f64 = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / reference.pixels().len() as f64)
}

/// Peak signal-to-noise ratio in dB over all pixels and channels.
/// Identical images give `f64::INFINITY`.
pub fn psnr(reference: &ImageBuffer, test: &ImageBuffer) -> Result<f64> {
    let mse = mse(reference, test)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DATA_RANGE * DATA_RANGE / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *w = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian filter keeping only fully covered windows.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, a)| a * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255, evaluated per channel over fully covered windows and
/// averaged across channels.
pub fn ssim(reference: &ImageBuffer, test: &ImageBuffer) -> Result<f64> {
    check_dims(reference, test)?;
    let (h, w) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CodecError::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * DATA_RANGE).powi(2);
    let c2 = (SSIM_K2 * DATA_RANGE).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = reference.pixels().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let y: Vec<f64> = test.pixels().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}

fn check_embed_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CodecError::DimensionMismatch(format!(
            "embedding dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Cosine similarity in `[-1, 1]`.
pub fn embed_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_embed_dims(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(CodecError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Sum of absolute coordinate differences.
pub fn embed_l1(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_embed_dims(a, b)?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum())
}

/// Serializes an infinite dB value as the string `"inf"`.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// `inf` for the lossless sentinel, otherwise fixed 4-decimal dB.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TileReport {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub payload_bytes: usize,
    #[serde(serialize_with = "serialize_db", rename = "psnr_db")]
    pub psnr: f64,
}

/// One row of a rate-distortion table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateDistortionReport {
    pub payload_bytes: usize,
    pub total_bytes: usize,
    #[serde(serialize_with = "serialize_db", rename = "psnr_db")]
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_cosine: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_l1: Option<f64>,
    pub tiles: Vec<TileReport>,
}

pub fn build_report(
    original: &ImageBuffer,
    container: &CompressedContainer,
    reconstruction: &ImageBuffer,
    embeddings: Option<(&EmbeddingVector, &EmbeddingVector)>,
) -> Result<RateDistortionReport> {
    check_dims(original, reconstruction)?;
    if original.dims() != (container.image_height, container.image_width) {
        return Err(CodecError::DimensionMismatch(format!(
            "container covers {}x{}, image is {}x{}",
            container.image_width,
            container.image_height,
            original.width(),
            original.height()
        )));
    }
    let tiles = (0..container.tiles.len())
        .map(|index| {
            let (top, left, h, w) = container.tile_rect(index);
            let a = original.crop(top, left, h, w)?;
            let b = reconstruction.crop(top, left, h, w)?;
            Ok(TileReport {
                index,
                row: index / container.cols,
                col: index % container.cols,
                payload_bytes: container.tiles[index].len(),
                psnr: psnr(&a, &b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (embed_cosine, embed_l1) = match embeddings {
        Some((a, b)) => (Some(embed_cosine(a, b)?), Some(embed_l1(a, b)?)),
        None => (None, None),
    };
    Ok(RateDistortionReport {
        payload_bytes: container.payload_bytes(),
        total_bytes: container.total_bytes(),
        psnr: psnr(original, reconstruction)?,
        ssim: ssim(original, reconstruction)?,
        embed_cosine,
        embed_l1,
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use proptest::prelude::*;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec(), "test").unwrap()
    }

    #[test]
    fn psnr_fixtures() {
        let a = synthetic::tissue_tile(1, 32, 32);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let base = ImageBuffer::from_fn(16, 16, |y, x| [(y * 10) as u8, (x * 10) as u8, 100]).unwrap();
        let plus = ImageBuffer::new(16, 16, base.pixels().iter().map(|p| p + 1).collect()).unwrap();
        // 20·log10(255), evaluated by hand
        assert!((psnr(&base, &plus).unwrap() - 48.130803608679).abs() < 1e-9);
        let narrow = ImageBuffer::filled(256, 255, [0, 0, 0]).unwrap();
        let wide = ImageBuffer::filled(256, 256, [0, 0, 0]).unwrap();
        assert!(matches!(psnr(&wide, &narrow), Err(CodecError::DimensionMismatch(_))));
    }

    #[test]
    fn ssim_identity_and_size_checks() {
        let a = synthetic::tissue_tile(2, 40, 30);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let tiny = ImageBuffer::filled(10, 40, [1, 2, 3]).unwrap();
        assert!(matches!(ssim(&tiny, &tiny), Err(CodecError::ImageTooSmall { .. })));
    }

    #[test]
    fn ssim_constant_images_follow_luminance_term() {
        let a = ImageBuffer::filled(24, 24, [100, 100, 100]).unwrap();
        let b = ImageBuffer::filled(24, 24, [150, 150, 150]).unwrap();
        let c1 = (0.01f64 * 255.0).powi(2);
        let closed = (2.0 * 100.0 * 150.0 + c1) / (100.0f64.powi(2) + 150.0f64.powi(2) + c1);
        assert!((ssim(&a, &b).unwrap() - closed).abs() < 1e-6);
    }

    fn checker_fixture() -> ImageBuffer {
        ImageBuffer::from_fn(32, 40, |y, x| {
            let on = ((y / 4) + (x / 4)) % 2 == 1;
            let (r, g) = if on { (200, 180) } else { (40, 60) };
            [r, g, ((y * 5 + x * 3) % 256) as u8]
        })
        .unwrap()
    }

    // Reference values from scikit-image 0.25 structural_similarity with
    // gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    // data_range=255, channel_axis=2.
    #[test]
    fn ssim_matches_reference_implementation() {
        let a = checker_fixture();
        let inverted = ImageBuffer::new(32, 40, a.pixels().iter().map(|p| 255 - p).collect()).unwrap();
        let got = ssim(&a, &inverted).unwrap();
        assert!((got - -0.7566558793089729).abs() < 1e-9, "{got}");
        let mut damaged = a.pixels().to_vec();
        for y in (0..32).step_by(3) {
            for x in (0..40).step_by(2) {
                damaged[(y * 40 + x) * 3 + 1] /= 2;
            }
        }
        let got = ssim(&a, &ImageBuffer::new(32, 40, damaged).unwrap()).unwrap();
        assert!((got - 0.9677695813293754).abs() < 1e-9, "{got}");
    }

    #[test]
    fn embedding_identities() {
        let v = ev(&[0.3, -1.2, 2.5, 0.0]);
        let neg = ev(&[-0.3, 1.2, -2.5, 0.0]);
        assert_eq!(embed_cosine(&v, &v).unwrap(), 1.0);
        assert_eq!(embed_cosine(&v, &neg).unwrap(), -1.0);
        assert_eq!(embed_cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(embed_l1(&v, &v).unwrap(), 0.0);
        assert_eq!(embed_l1(&ev(&[1.0, 2.0]), &ev(&[2.0, 0.0])).unwrap(), 3.0);
        assert!(matches!(embed_cosine(&ev(&[0.0, 0.0]), &v.clone()), Err(CodecError::DimensionMismatch(_))));
        assert!(matches!(embed_cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])), Err(CodecError::ZeroVector)));
        assert!(matches!(embed_l1(&ev(&[1.0]), &v), Err(CodecError::DimensionMismatch(_))));
    }

    #[test]
    fn report_json_uses_stable_names() {
        let r = RateDistortionReport {
            payload_bytes: 4096,
            total_bytes: 5176,
            psnr: f64::INFINITY,
            ssim: 1.0,
            embed_cosine: None,
            embed_l1: None,
            tiles: vec![],
        };
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["psnr_db"], "inf");
        assert_eq!(json["payload_bytes"], 4096);
        assert!(json.get("embed_cosine").is_none());
        assert!(json.get("embed_l1").is_none());
    }

    fn small_image() -> impl Strategy<Value = (ImageBuffer, ImageBuffer)> {
        (11usize..20, 11usize..20).prop_flat_map(|(h, w)| {
            (
                proptest::collection::vec(any::<u8>(), h * w * 3),
                proptest::collection::vec(any::<u8>(), h * w * 3),
            )
                .prop_map(move |(a, b)| (ImageBuffer::new(h, w, a).unwrap(), ImageBuffer::new(h, w, b).unwrap()))
        })
    }

    fn embedding(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-10.0f32..10.0, dim)
    }

    proptest! {
        #[test]
        fn pixel_metrics_are_symmetric((a, b) in small_image()) {
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }

        #[test]
        fn l1_triangle_inequality(a in embedding(16), b in embedding(16), c in embedding(16)) {
            let (a, b, c) = (ev(&a), ev(&b), ev(&c));
            let ab = embed_l1(&a, &b).unwrap();
            let bc = embed_l1(&b, &c).unwrap();
            let ac = embed_l1(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn cosine_scale_invariant(a in embedding(8), b in embedding(8), s in 0.01f32..100.0) {
            let (a, b) = (ev(&a), ev(&b));
            prop_assume!(a.values().iter().any(|v| *v != 0.0) && b.values().iter().any(|v| *v != 0.0));
            let base = embed_cosine(&a, &b).unwrap();
            let scaled = embed_cosine(&a.scaled(s).unwrap(), &b).unwrap();
            prop_assert!((base - scaled).abs() < 1e-5);
        }

        #[test]
        fn l1_scales_linearly(a in embedding(8), b in embedding(8), s in 0.125f32..8.0) {
            let (a, b) = (ev(&a), ev(&b));
            let base = embed_l1(&a, &b).unwrap();
            let scaled = embed_l1(&a.scaled(s).unwrap(), &b.scaled(s).unwrap()).unwrap();
            prop_assert!((scaled - s as f64 * base).abs() <= 1e-4 * (1.0 + s as f64 * base));
        }
    }
}
