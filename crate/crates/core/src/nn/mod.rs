//! Minimal dense neural-network engine.

pub mod model;
pub mod ops;
pub mod train;

pub use model::{model_backward, model_forward, ForwardOutput, Gradients, ParamGrad};
pub use ops::conv2d_forward;
pub use train::{evaluate_accuracy, lr_at, predict, sgd_step, train_run, SgdState, TrainConfig, TrainSummary};
