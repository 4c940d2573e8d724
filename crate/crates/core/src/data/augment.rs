//! Random crop (zero padding) and horizontal flip on raw `[0, 1]` pixels.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const CROP_PADDING: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPolicy {
    #[default]
    None,
    Crop,
    CropFlip,
}

/// Crops an `h x w` window at `(dy, dx)` out of the image zero-padded by `pad`.
pub fn crop_with_offset(image: &[f32], shape: [usize; 3], pad: usize, dy: usize, dx: usize) -> Vec<f32> {
    let [c, h, w] = shape;
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    out[(ch * h + y) * w + x] = image[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}

pub fn hflip(image: &mut [f32], shape: [usize; 3]) {
    let w = shape[2];
    for row in image.chunks_mut(w) {
        row.reverse();
    }
}

/// Augments a batch of concatenated images in place.
pub fn augment<R: Rng>(pixels: &mut [f32], shape: [usize; 3], policy: AugmentPolicy, rng: &mut R) {
    if policy == AugmentPolicy::None {
        return;
    }
    let per = shape.iter().product::<usize>();
    for image in pixels.chunks_mut(per) {
        let dy = rng.gen_range(0..=2 * CROP_PADDING);
        let dx = rng.gen_range(0..=2 * CROP_PADDING);
        let cropped = crop_with_offset(image, shape, CROP_PADDING, dy, dx);
        image.copy_from_slice(&cropped);
        if policy == AugmentPolicy::CropFlip && rng.gen_bool(0.5) {
            hflip(image, shape);
        }
    }
}
