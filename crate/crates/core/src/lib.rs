//! Structured filter pruning driven by activation attention.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`nn`]: a small dense CPU engine (conv2d, pooling,
//!   linear layers, Nesterov SGD) sufficient for LeNet-class models.
//! - [`graph`]: the masked model representation, filter pruning and physical
//!   compaction into a smaller dense model.
//! - [`attention`]: per-filter importance scores from post-ReLU activations,
//!   plus L1 weight-magnitude criteria used as baselines.
//! - [`accounting`]: parameter/FLOP estimates and layer-aware thresholds.
//! - [`controller`]: the iterative prune/rewind/retrain loop with adaptive
//!   threshold control, rollback and the target policies.
//! - [`checkpoint`]: bit-exact persistence used for rewinding and rollback.
//! - [`data`]: IDX parsing, synthetic data, batching and augmentation.
//! - [`oracle`]: a deterministic stand-in for training used to exercise the
//!   controller quickly.

pub mod accounting;
pub mod attention;
pub mod checkpoint;
pub mod controller;
pub mod data;
pub mod error;
pub mod graph;
pub mod nn;
pub mod oracle;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Architecture, FilterMask, LayerKind, LayerSpec, ModelGraph};
pub use tensor::{Scalar, Tensor};
