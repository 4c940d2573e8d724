//! Datasets, deterministic batching and augmentation.

pub mod augment;
pub mod idx;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentPolicy};
pub use idx::{load_idx, load_mnist_dir};
pub use synthetic::synthetic_blobs;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Environment variable overriding the dataset root directory.
pub const DATA_DIR_ENV: &str = "AAP_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-pixel standardization `(x - mean) / std` applied at batch assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f32,
    pub std: f32,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

/// Images `[N, C, H, W]` scaled to `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<usize>,
    shape: [usize; 3],
    num_classes: usize,
    split: Split,
    norm: Normalization,
    /// Augmentation used when no policy is configured explicitly.
    pub default_augment: AugmentPolicy,
}

impl Dataset {
    pub fn new(images: Vec<f32>, labels: Vec<usize>, shape: [usize; 3], num_classes: usize, split: Split) -> Result<Self> {
        let per_image: usize = shape.iter().product();
        if per_image == 0 || images.len() != labels.len() * per_image {
            return Err(Error::invalid(format!(
                "{} pixels do not hold {} images of {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            images,
            labels,
            shape,
            num_classes,
            split,
            norm: Normalization::default(),
            default_augment: AugmentPolicy::None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.shape.iter().product::<usize>();
        &self.images[index * n..(index + 1) * n]
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn set_normalization(&mut self, norm: Normalization) {
        self.norm = norm;
    }

    /// Mean and standard deviation over every pixel of this split.
    pub fn pixel_stats(&self) -> Normalization {
        let n = self.images.len().max(1) as f64;
        let mean = self.images.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.images.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        Normalization {
            mean: mean as f32,
            std: (var.sqrt() as f32).max(1e-6),
        }
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let per = self.shape.iter().product::<usize>();
        Dataset {
            images: self.images[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Raw `[0, 1]` pixels of the selected examples, concatenated.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.shape.iter().product::<usize>());
        for &i in indices {
            out.extend_from_slice(self.image(i));
        }
        out
    }

    /// Standardizes raw pixels into a `[B, C, H, W]` tensor.
    pub fn to_tensor<S: Scalar>(&self, pixels: &[f32], batch: usize) -> Tensor<S> {
        let Normalization { mean, std } = self.norm;
        let data = pixels
            .iter()
            .map(|&p| S::from_f64_lossy(((p - mean) / std) as f64))
            .collect();
        let [c, h, w] = self.shape;
        Tensor::from_vec(&[batch, c, h, w], data).expect("pixel count")
    }

    /// Assembles an un-augmented batch.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let pixels = self.gather(indices);
        (
            self.to_tensor(&pixels, indices.len()),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Mixes a seed with a stream id into one RNG.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic shuffled batches for one epoch; the last partial batch is kept.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(seed, epoch as u64));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
