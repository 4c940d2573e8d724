//! "Blobs": Gaussian class clusters rendered as images, for fast runs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{rng_for, Dataset, Split};
use crate::error::Result;

/// `n` images of `shape`; class `k` is a bright Gaussian bump at a
/// class-specific position on a ring, jittered by about one pixel, plus noise.
pub fn synthetic_blobs(n: usize, num_classes: usize, shape: [usize; 3], seed: u64, split: Split) -> Result<Dataset> {
    let [c, h, w] = shape;
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = rng_for(seed, stream);
    let noise = Normal::new(0.0f64, 0.08).expect("valid std");
    let jitter = Normal::new(0.0f64, 0.6).expect("valid std");
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let radius = 0.3 * h.min(w) as f64;
    let sigma = (0.12 * h.min(w) as f64).max(0.8);
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.gen_range(0..num_classes);
        let angle = std::f64::consts::TAU * label as f64 / num_classes as f64;
        let by = cy + radius * angle.sin() + jitter.sample(&mut rng);
        let bx = cx + radius * angle.cos() + jitter.sample(&mut rng);
        for ch in 0..c {
            let gain = 1.0 - 0.3 * ch as f64 / c.max(1) as f64;
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                    let v = gain * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                    images.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        labels.push(label);
    }
    Dataset::new(images, labels, shape, num_classes, split)
}
