//! 8-bit RGB raster plus PNG / binary PPM file I/O.

use std::path::Path;

use crate::error::{CodecError, Result};

/// Row-major interleaved RGB, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CodecError::InvalidArgument(format!(
                "image {width}x{height} has zero area"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(3))
            .ok_or(CodecError::SizeOverflow)?;
        if pixels.len() != expected {
            return Err(CodecError::ShapeMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(height.saturating_mul(width).saturating_mul(3))
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Pixel at possibly out-of-range coordinates, mirrored about the border
    /// without repeating the edge sample.
    pub fn pixel_reflect(&self, y: isize, x: isize) -> [u8; 3] {
        self.pixel(reflect(y, self.height), reflect(x, self.width))
    }

    /// `h × w` window starting at `(top, left)`; parts outside the image are
    /// filled by reflection.
    pub fn region_reflect(&self, top: usize, left: usize, h: usize, w: usize) -> Result<ImageBuffer> {
        ImageBuffer::from_fn(h, w, |y, x| {
            self.pixel_reflect((top + y) as isize, (left + x) as isize)
        })
    }

    /// Copy of the in-bounds window; panics if the window leaves the image.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<ImageBuffer> {
        assert!(top + h <= self.height && left + w <= self.width, "crop outside image");
        let mut pixels = Vec::with_capacity(h * w * 3);
        for y in top..top + h {
            let start = (y * self.width + left) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        ImageBuffer::new(h, w, pixels)
    }

    /// Writes `src` into this image at `(top, left)`, clipping at the borders.
    pub fn paste(&mut self, src: &ImageBuffer, top: usize, left: usize) {
        let h = src.height.min(self.height.saturating_sub(top));
        let w = src.width.min(self.width.saturating_sub(left));
        for y in 0..h {
            let dst = ((top + y) * self.width + left) * 3;
            let s = y * src.width * 3;
            self.pixels[dst..dst + w * 3].copy_from_slice(&src.pixels[s..s + w * 3]);
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let img = image::load_from_memory(&bytes)
            .map_err(|e| CodecError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.into_raw())
    }

    /// Saves as PPM when the extension is `.ppm`/`.pnm`, PNG otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        let format = match ext.as_deref() {
            Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
            _ => image::ImageFormat::Png,
        };
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        match format {
            image::ImageFormat::Pnm => {
                let enc = image::codecs::pnm::PnmEncoder::new(&mut out)
                    .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(
                        image::codecs::pnm::SampleEncoding::Binary,
                    ));
                buf.write_with_encoder(enc)
            }
            _ => buf.write_to(&mut out, format),
        }
        .map_err(|e| CodecError::Image(format!("{}: {e}", path.display())))?;
        std::fs::write(path, out.into_inner())?;
        Ok(())
    }
}

/// RGB raster of real intensities on the `[0, 1]` scale, row-major
/// interleaved like [`ImageBuffer`]. Values may leave `[0, 1]` before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn from_image(img: &ImageBuffer) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        }
    }

    pub fn get_reflect(&self, y: isize, x: isize, ch: usize) -> f32 {
        let (y, x) = (reflect(y, self.height), reflect(x, self.width));
        self.data[(y * self.width + x) * 3 + ch]
    }

    /// Clamps to `[0, 1]`, rounds to 8 bits and crops to `height × width`.
    pub fn to_image(&self, height: usize, width: usize) -> Result<ImageBuffer> {
        if height > self.height || width > self.width {
            return Err(CodecError::DimensionMismatch(format!(
                "cannot crop {}x{} to {width}x{height}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let row = &self.data[y * self.width * 3..(y * self.width + width) * 3];
            pixels.extend(row.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        ImageBuffer::new(height, width, pixels)
    }
}

/// Mirror index `i` into `0..n` (reflect mode, edge sample not repeated).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}
