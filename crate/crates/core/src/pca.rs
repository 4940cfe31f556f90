//! Patch principal-components codec: a linear encoder/decoder producing latents
//! with the same `(f, c)` layout as the diffusion autoencoders it stands in for.
//!
//! Each `f × f` RGB patch (scaled to `[0, 1]`) becomes a `3f²` vector; its
//! latent cell is the projection of the mean-centred vector onto the top `c`
//! principal directions.
//!
//! Model file:
//!
//! ```text
//! "PCA1" | u8 version=1 | u32 f | u32 c | u32 patch_dim | [u8; 16] model_id
//! patch_dim f32 LE (mean) | c·patch_dim f32 LE (components, row-major)
//! ```

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};
use crate::image::{FloatImage, ImageBuffer};
use crate::latent::{latent_grid_for_image, LatentLayout, LatentTensor};
use crate::wire::{self, Reader};

pub const PCA_MAGIC: &str = "PCA1";
pub const PCA_VERSION: u8 = 1;
pub const DEFAULT_MAX_PATCHES: usize = 1 << 16;

// Rows accumulated per covariance update.
const COV_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub sample_count: usize,
    pub retained_variance_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCodecModel {
    layout: LatentLayout,
    mean: Vec<f32>,
    /// `c × patch_dim`, orthonormal rows.
    components: Vec<f32>,
    train_stats: Option<TrainStats>,
}

impl LinearCodecModel {
    pub fn new(layout: LatentLayout, mean: Vec<f32>, components: Vec<f32>) -> Result<Self> {
        let d = layout.patch_dim();
        let c = layout.channels() as usize;
        if c > d {
            return Err(CodecError::InvalidLayout(format!(
                "{c} channels exceed patch dimension {d}"
            )));
        }
        if mean.len() != d {
            return Err(CodecError::ShapeMismatch {
                expected: d,
                actual: mean.len(),
            });
        }
        if components.len() != c * d {
            return Err(CodecError::ShapeMismatch {
                expected: c * d,
                actual: components.len(),
            });
        }
        if let Some(index) = mean.iter().chain(&components).position(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite { index });
        }
        Ok(Self {
            layout,
            mean,
            components,
            train_stats: None,
        })
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn patch_dim(&self) -> usize {
        self.layout.patch_dim()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn component(&self, k: usize) -> &[f32] {
        let d = self.patch_dim();
        &self.components[k * d..(k + 1) * d]
    }

    /// Present on freshly fitted models; not stored in model files.
    pub fn train_stats(&self) -> Option<TrainStats> {
        self.train_stats
    }

    /// Largest `|⟨r_i, r_j⟩ − δ_ij|` over component pairs.
    pub fn orthonormality_error(&self) -> f64 {
        let c = self.layout.channels() as usize;
        let mut worst = 0.0f64;
        for i in 0..c {
            for j in i..c {
                let dot: f64 = self
                    .component(i)
                    .iter()
                    .zip(self.component(j))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn encode(&self, image: &ImageBuffer) -> Result<LatentTensor> {
        self.encode_float(&FloatImage::from_image(image))
    }

    /// Encodes a real-valued image; dimensions not divisible by `f` are
    /// reflection-padded up to the ceiling grid.
    pub fn encode_float(&self, image: &FloatImage) -> Result<LatentTensor> {
        let (gh, gw) = latent_grid_for_image(&self.layout, (image.height, image.width));
        let c = self.layout.channels() as usize;
        let d = self.patch_dim();
        let plane = gh * gw;
        let mut values = vec![0.0f32; c * plane];
        let mut patch = vec![0.0f64; d];
        for i in 0..gh {
            for j in 0..gw {
                self.centred_patch(image, i, j, &mut patch);
                for k in 0..c {
                    let z: f64 = self
                        .component(k)
                        .iter()
                        .zip(&patch)
                        .map(|(&w, &p)| w as f64 * p)
                        .sum();
                    values[k * plane + i * gw + j] = z as f32;
                }
            }
        }
        LatentTensor::new(self.layout.clone(), gh, gw, values)
    }

    fn centred_patch(&self, image: &FloatImage, i: usize, j: usize, out: &mut [f64]) {
        let f = self.layout.factor() as usize;
        extract_patch(image, f, i, j, out);
        for (p, &m) in out.iter_mut().zip(&self.mean) {
            *p -= m as f64;
        }
    }

    /// Unclamped reconstruction covering the full latent grid.
    pub fn decode_float(&self, latent: &LatentTensor) -> Result<FloatImage> {
        if !latent.layout().same_shape(&self.layout) {
            return Err(CodecError::LayoutMismatch {
                expected: self.layout.to_string(),
                actual: latent.layout().to_string(),
            });
        }
        let f = self.layout.factor() as usize;
        let c = self.layout.channels() as usize;
        let d = self.patch_dim();
        let (gh, gw) = (latent.height(), latent.width());
        let mut out = FloatImage::zeros(gh * f, gw * f);
        let mut patch = vec![0.0f64; d];
        for i in 0..gh {
            for j in 0..gw {
                for (p, &m) in patch.iter_mut().zip(&self.mean) {
                    *p = m as f64;
                }
                for k in 0..c {
                    let z = latent.get(k, i, j) as f64;
                    if z == 0.0 {
                        continue;
                    }
                    for (p, &w) in patch.iter_mut().zip(self.component(k)) {
                        *p += z * w as f64;
                    }
                }
                for py in 0..f {
                    for px in 0..f {
                        let dst = ((i * f + py) * out.width + j * f + px) * 3;
                        let src = (py * f + px) * 3;
                        for ch in 0..3 {
                            out.data[dst + ch] = patch[src + ch] as f32;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decodes to 8-bit RGB cropped to `out_dims = (H, W)`.
    pub fn decode(&self, latent: &LatentTensor, out_dims: (usize, usize)) -> Result<ImageBuffer> {
        self.decode_float(latent)?.to_image(out_dims.0, out_dims.1)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.patch_dim();
        let mut out = Vec::with_capacity(33 + 4 * (d + self.components.len()));
        out.extend_from_slice(PCA_MAGIC.as_bytes());
        out.push(PCA_VERSION);
        out.extend_from_slice(&self.layout.factor().to_le_bytes());
        out.extend_from_slice(&self.layout.channels().to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&wire::encode_id(self.layout.model_id())?);
        wire::put_f32s(&mut out, &self.mean);
        wire::put_f32s(&mut out, &self.components);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PCA_MAGIC)?;
        let version = r.u8()?;
        if version != PCA_VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let f = r.u32()?;
        let c = r.u32()?;
        let d = r.u32()? as usize;
        let id = r.id()?;
        let layout = LatentLayout::new(f, c, id).map_err(|e| CodecError::UnsupportedField(e.to_string()))?;
        if d != layout.patch_dim() || c as usize > d {
            return Err(CodecError::UnsupportedField(format!(
                "patch_dim {d} inconsistent with f{f}c{c}"
            )));
        }
        let mean = r.f32_vec(d)?;
        let components = r.f32_vec(c as usize * d)?;
        r.finish()?;
        Self::new(layout, mean, components).map_err(|e| match e {
            CodecError::NonFinite { .. } => CodecError::UnsupportedField("non-finite weight".into()),
            other => other,
        })
    }
}

/// Copies the `f × f` patch at grid cell `(i, j)` into `out` as
/// `(py·f + px)·3 + channel`, reflecting past the image border.
fn extract_patch(image: &FloatImage, f: usize, i: usize, j: usize, out: &mut [f64]) {
    let aligned = (i + 1) * f <= image.height && (j + 1) * f <= image.width;
    for py in 0..f {
        let y = i * f + py;
        if aligned {
            let start = (y * image.width + j * f) * 3;
            for (o, &v) in out[py * f * 3..(py + 1) * f * 3].iter_mut().zip(&image.data[start..start + f * 3]) {
                *o = v as f64;
            }
        } else {
            for px in 0..f {
                let x = j * f + px;
                for ch in 0..3 {
                    out[(py * f + px) * 3 + ch] = image.get_reflect(y as isize, x as isize, ch) as f64;
                }
            }
        }
    }
}

/// Fits the patch codec: mean patch plus the top-`c` principal directions of
/// the centred patch matrix, sign-fixed so each direction's largest-magnitude
/// coordinate is positive.
pub fn fit_linear_codec(
    images: &[ImageBuffer],
    layout: LatentLayout,
    seed: u64,
    max_patches: usize,
) -> Result<LinearCodecModel> {
    let d = layout.patch_dim();
    let c = layout.channels() as usize;
    let f = layout.factor() as usize;
    if c > d {
        return Err(CodecError::InvalidLayout(format!(
            "{c} channels exceed patch dimension 3·{f}² = {d}"
        )));
    }

    let floats: Vec<FloatImage> = images.iter().map(FloatImage::from_image).collect();
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for (n, img) in floats.iter().enumerate() {
        let (gh, gw) = latent_grid_for_image(&layout, (img.height, img.width));
        for i in 0..gh {
            for j in 0..gw {
                cells.push((n, i, j));
            }
        }
    }
    if cells.len() > max_patches {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, cells.len(), max_patches).into_vec();
        picked.sort_unstable();
        cells = picked.into_iter().map(|i| cells[i]).collect();
    }
    let n = cells.len();
    if n < c + 1 {
        return Err(CodecError::TooFewPatches { needed: c + 1, got: n });
    }

    let mut patch = vec![0.0f64; d];
    let mut mean = vec![0.0f64; d];
    for &(img, i, j) in &cells {
        extract_patch(&floats[img], f, i, j, &mut patch);
        for (m, p) in mean.iter_mut().zip(&patch) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centred_rows = |range: std::ops::Range<usize>, patch: &mut [f64]| {
        let mut rows = DMatrix::<f64>::zeros(range.len(), d);
        for (r, &(img, i, j)) in cells[range].iter().enumerate() {
            extract_patch(&floats[img], f, i, j, patch);
            for k in 0..d {
                rows[(r, k)] = patch[k] - mean[k];
            }
        }
        rows
    };

    // eigenpairs of the covariance, descending
    let (eigenvalues, vectors): (Vec<f64>, Vec<Vec<f64>>) = if n >= d {
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut start = 0;
        while start < n {
            let end = (start + COV_CHUNK).min(n);
            let rows = centred_rows(start..end, &mut patch);
            cov += rows.transpose() * &rows;
            start = end;
        }
        cov /= n as f64;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        (
            order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect(),
            order
                .iter()
                .take(c)
                .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
                .collect(),
        )
    } else {
        // fewer patches than dimensions: diagonalize the n × n Gram matrix instead
        let x = centred_rows(0..n, &mut patch);
        let gram = &x * x.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut vectors = Vec::with_capacity(c);
        for &k in order.iter().take(c) {
            let mu = eig.eigenvalues[k];
            if mu <= 1e-12 * top || mu <= 0.0 {
                break;
            }
            let v = x.transpose() * eig.eigenvectors.column(k) / mu.sqrt();
            vectors.push(v.iter().copied().collect());
        }
        (order.iter().map(|&k| eig.eigenvalues[k].max(0.0) / n as f64).collect(), vectors)
    };

    let total: f64 = eigenvalues.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(CodecError::DegenerateVariance);
    }
    let retained: f64 = eigenvalues.iter().take(c).sum::<f64>() / total;

    let basis = orthonormal_completion(vectors, c, d);
    let mut components = Vec::with_capacity(c * d);
    for v in &basis {
        components.extend(v.iter().map(|&x| x as f32));
    }
    let mut model = LinearCodecModel::new(layout, mean.iter().map(|&m| m as f32).collect(), components)?;
    model.train_stats = Some(TrainStats {
        sample_count: n,
        retained_variance_fraction: retained.min(1.0),
    });
    Ok(model)
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Re-orthonormalizes `vectors` in order (two Gram-Schmidt passes), tops the
/// set up to `c` with standard basis directions, and canonicalizes signs.
fn orthonormal_completion(vectors: Vec<Vec<f64>>, c: usize, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(c);
    let push = |mut v: Vec<f64>, basis: &mut Vec<Vec<f64>>| -> bool {
        let before = norm(&v);
        for _ in 0..2 {
            for b in basis.iter() {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let after = norm(&v);
        if before == 0.0 || after < 1e-6 * before.max(1.0) {
            return false;
        }
        for x in &mut v {
            *x /= after;
        }
        basis.push(v);
        true
    };
    for v in vectors {
        if basis.len() == c {
            break;
        }
        push(v, &mut basis);
    }
    let mut axis = 0;
    while basis.len() < c && axis < d {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        push(e, &mut basis);
        axis += 1;
    }
    for v in &mut basis {
        let (mut arg, mut best) = (0, -1.0);
        for (k, x) in v.iter().enumerate() {
            if x.abs() > best {
                best = x.abs();
                arg = k;
            }
        }
        if v[arg] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
    basis
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
