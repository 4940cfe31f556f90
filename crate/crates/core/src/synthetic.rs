//! Seeded synthetic fixtures: H&E-like tissue tiles and Laplace-distributed
//! latent values. Used by the test suites and the demo corpus generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageBuffer;

/// A `height × width` tile of pink stroma with smooth intensity variation,
/// scattered purple nuclei and fine sensor noise. Same seed, same pixels.
pub fn tissue_tile(seed: u64, height: usize, width: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // low-frequency value noise on a coarse lattice
    let cell = 24.0;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let smooth = |y: f64, x: f64| {
        let (gy, gx) = (y / cell, x / cell);
        let (iy, ix) = (gy.floor() as usize, gx.floor() as usize);
        let (ty, tx) = (gy - iy as f64, gx - ix as f64);
        let (sy, sx) = (ty * ty * (3.0 - 2.0 * ty), tx * tx * (3.0 - 2.0 * tx));
        let at = |a: usize, b: usize| lattice[a * gw + b];
        let top = at(iy, ix) * (1.0 - sx) + at(iy, ix + 1) * sx;
        let bot = at(iy + 1, ix) * (1.0 - sx) + at(iy + 1, ix + 1) * sx;
        top * (1.0 - sy) + bot * sy
    };

    let base = [
        rng.random_range(225.0..245.0),
        rng.random_range(170.0..200.0),
        rng.random_range(200.0..225.0),
    ];
    let nucleus = [
        rng.random_range(60.0..100.0),
        rng.random_range(30.0..60.0),
        rng.random_range(110.0..150.0),
    ];
    let density = rng.random_range(0.6..1.4);
    let count = ((height * width) as f64 / 700.0 * density) as usize;
    let nuclei: Vec<(f64, f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                rng.random_range(2.5..6.5),
                rng.random_range(2.5..6.5),
                rng.random_range(0.0..std::f64::consts::PI),
            )
        })
        .collect();

    let mut field = vec![0.0f64; height * width];
    for &(cy, cx, ry, rx, theta) in &nuclei {
        let reach = ry.max(rx) + 2.0;
        let (cos, sin) = (theta.cos(), theta.sin());
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(height);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(width);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let u = (dy * cos + dx * sin) / ry;
                let v = (-dy * sin + dx * cos) / rx;
                let r = (u * u + v * v).sqrt();
                // soft edge over roughly one pixel
                let w = (1.0 - (r - 1.0) * 3.0).clamp(0.0, 1.0);
                let f = &mut field[y * width + x];
                *f = f.max(w);
            }
        }
    }

    let mut pixels = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let shade = 0.8 + 0.35 * smooth(y as f64, x as f64);
            let w = field[y * width + x];
            for ch in 0..3 {
                let stroma = base[ch] * shade;
                let v = stroma * (1.0 - w) + nucleus[ch] * w + rng.random_range(-6.0..6.0);
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(height, width, pixels).expect("dimensions are consistent")
}

/// `n` draws from Laplace(0, scale) by inverse-CDF sampling.
pub fn laplace_samples(seed: u64, n: usize, scale: f64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.random_range(-0.5..0.5);
            while u == -0.5 {
                u = rng.random_range(-0.5..0.5);
            }
            (-scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()) as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_are_deterministic_and_varied() {
        let a = tissue_tile(3, 64, 48);
        assert_eq!(a, tissue_tile(3, 64, 48));
        assert_ne!(a, tissue_tile(4, 64, 48));
        let distinct: std::collections::HashSet<_> = a.pixels().iter().collect();
        assert!(distinct.len() > 50);
    }

    #[test]
    fn laplace_moments() {
        let v = laplace_samples(1, 200_000, 0.5);
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        let mad = v.iter().map(|&x| (x as f64).abs()).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        // E|X| = b
        assert!((mad - 0.5).abs() < 0.01, "{mad}");
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
