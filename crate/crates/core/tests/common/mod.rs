#![allow(dead_code)]

use longitomo::ImageGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    ImageGrid::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

pub fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Centered disk of value 1 with a raised-cosine edge of the given width.
pub fn smooth_disk(size: usize, radius: f64, edge: f64) -> ImageGrid {
    let c = (size as f64 - 1.0) / 2.0;
    ImageGrid::from_fn(size, size, |col, row| {
        let r = ((col as f64 - c).powi(2) + (row as f64 - c).powi(2)).sqrt();
        let t = (r - (radius - edge / 2.0)) / edge;
        if t <= 0.0 {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    })
    .unwrap()
}

/// RMSE over pixels whose center lies within `radius` of the image center.
pub fn interior_rmse(a: &ImageGrid, b: &ImageGrid, radius: f64) -> f64 {
    let c = (a.width() as f64 - 1.0) / 2.0;
    let mut sum = 0.0;
    let mut n = 0usize;
    for row in 0..a.height() {
        for col in 0..a.width() {
            if (col as f64 - c).hypot(row as f64 - c) <= radius {
                sum += (a.get(col, row) - b.get(col, row)).powi(2);
                n += 1;
            }
        }
    }
    (sum / n as f64).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
