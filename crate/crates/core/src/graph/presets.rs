use serde::{Deserialize, Serialize};

use super::{LayerSpec, ModelGraph};
use crate::error::Result;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Lenet5,
    Lenet300,
    Smallconv,
}

impl Preset {
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Preset::Lenet5 | Preset::Lenet300 => [1, 28, 28],
            Preset::Smallconv => [1, 12, 12],
        }
    }

    pub fn specs(self) -> Vec<LayerSpec> {
        match self {
            // 28x28 -> conv5 -> 24x24 -> pool -> 12x12 -> conv5 -> 8x8 -> pool -> 4x4
            Preset::Lenet5 => vec![
                LayerSpec::conv(1, 6, 5),
                LayerSpec::relu(),
                LayerSpec::maxpool(2),
                LayerSpec::conv(6, 16, 5),
                LayerSpec::relu(),
                LayerSpec::maxpool(2),
                LayerSpec::flatten(),
                LayerSpec::linear(16 * 4 * 4, 120),
                LayerSpec::relu(),
                LayerSpec::linear(120, 84),
                LayerSpec::relu(),
                LayerSpec::linear(84, 10).frozen(),
            ],
            Preset::Lenet300 => vec![
                LayerSpec::flatten(),
                LayerSpec::linear(784, 300),
                LayerSpec::relu(),
                LayerSpec::linear(300, 100),
                LayerSpec::relu(),
                LayerSpec::linear(100, 10).frozen(),
            ],
            // 12x12 -> conv3 -> 10x10 -> pool -> 5x5 -> conv3 -> 3x3
            Preset::Smallconv => vec![
                LayerSpec::conv(1, 4, 3),
                LayerSpec::relu(),
                LayerSpec::maxpool(2),
                LayerSpec::conv(4, 8, 3),
                LayerSpec::relu(),
                LayerSpec::flatten(),
                LayerSpec::linear(8 * 3 * 3, 10).frozen(),
            ],
        }
    }
}

pub fn preset<S: Scalar>(preset: Preset, seed: u64) -> Result<ModelGraph<S>> {
    ModelGraph::new(preset.input_shape(), &preset.specs(), seed)
}

/// LeNet-5 for 28x28 single-channel input (k=5, no padding, 2x2 max-pool).
pub fn lenet5<S: Scalar>(seed: u64) -> Result<ModelGraph<S>> {
    preset(Preset::Lenet5, seed)
}

/// LeNet-300-100 multilayer perceptron.
pub fn lenet300<S: Scalar>(seed: u64) -> Result<ModelGraph<S>> {
    preset(Preset::Lenet300, seed)
}

/// A tiny two-conv network for fast tests.
pub fn smallconv<S: Scalar>(seed: u64) -> Result<ModelGraph<S>> {
    preset(Preset::Smallconv, seed)
}
