//! Nesterov SGD with a step learning-rate schedule.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{augment, batches, rng_for, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::tensor::Scalar;

use super::model::{model_backward, model_forward, Gradients};

fn default_decay_factor() -> f64 {
    0.1
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    pub total_epochs: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Falls back to the dataset's default policy when absent.
    #[serde(default)]
    pub augment: Option<AugmentPolicy>,
}

impl TrainConfig {
    /// LeNet-5 on MNIST: lr 0.1, no decay, 100 epochs, no weight decay, batch 256.
    pub fn lenet5_mnist() -> Self {
        Self {
            initial_lr: 0.1,
            decay_epochs: Vec::new(),
            decay_factor: 0.1,
            total_epochs: 100,
            weight_decay: 0.0,
            momentum: 0.9,
            batch_size: 256,
            seed: 0,
            augment: None,
        }
    }

    /// Returns `(field, message)` for the first violated constraint.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(("initial_lr", "must be a positive finite number".into()));
        }
        if self.total_epochs == 0 {
            return Err(("total_epochs", "must be >= 1".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(("decay_epochs", "must be strictly increasing".into()));
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.total_epochs) {
            return Err(("decay_epochs", "must be < total_epochs".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(("decay_factor", "must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(("momentum", "must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(("weight_decay", "must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be >= 1".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(field, msg)| Error::invalid(format!("train.{field} {msg}")))
    }
}

/// `initial_lr * decay_factor^(number of decay epochs <= epoch)`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside [0, {})",
            config.total_epochs
        )));
    }
    let decays = config.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok(config.initial_lr * config.decay_factor.powi(decays as i32))
}

/// Momentum buffers, one per parameter tensor in [`ModelGraph::param_slices`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<S> {
    pub momentum: Vec<Vec<S>>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(model: &ModelGraph<S>) -> Self {
        Self {
            momentum: model
                .param_slices()
                .iter()
                .map(|s| vec![S::zero(); s.len()])
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for buf in &mut self.momentum {
            buf.fill(S::zero());
        }
    }
}

/// One Nesterov step with coupled L2 weight decay:
/// `g = grad + wd*w; v = mu*v + g; w -= lr*(g + mu*v)`.
pub fn sgd_step<S: Scalar>(
    model: &mut ModelGraph<S>,
    grads: &Gradients<S>,
    state: &mut SgdState<S>,
    lr: f64,
    config: &TrainConfig,
) {
    let (lr, mu, wd) = (
        S::from_f64_lossy(lr),
        S::from_f64_lossy(config.momentum),
        S::from_f64_lossy(config.weight_decay),
    );
    let grad_slices = grads.slices();
    for ((param, grad), buf) in model
        .param_slices_mut()
        .into_iter()
        .zip(grad_slices)
        .zip(&mut state.momentum)
    {
        for ((w, &g), v) in param.iter_mut().zip(grad).zip(buf.iter_mut()) {
            let g = g + wd * *w;
            *v = mu * *v + g;
            *w = *w - lr * (g + mu * *v);
        }
    }
    model.apply_masks();
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainSummary {
    pub epochs_run: usize,
    /// Mean batch loss of the last epoch run.
    pub last_loss: f64,
    /// Test accuracy after the last epoch, when a test split was given.
    pub test_accuracy: Option<f64>,
}

/// Called after every completed epoch with the number of epochs completed so far.
pub type EpochHook<'a, S> = dyn FnMut(usize, &ModelGraph<S>, &SgdState<S>) -> Result<()> + 'a;

/// Trains epochs `epochs.start..epochs.end` (indices into the schedule).
pub fn train_run<S: Scalar>(
    model: &mut ModelGraph<S>,
    state: &mut SgdState<S>,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
    epochs: Range<usize>,
    hook: &mut EpochHook<'_, S>,
) -> Result<TrainSummary> {
    config.validate()?;
    if epochs.start > epochs.end || epochs.end > config.total_epochs {
        return Err(Error::invalid(format!(
            "epoch range {epochs:?} outside [0, {}]",
            config.total_epochs
        )));
    }
    if train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let policy = config.augment.unwrap_or(train.default_augment);
    let mut summary = TrainSummary::default();
    for epoch in epochs.clone() {
        let lr = lr_at(config, epoch)?;
        let mut aug_rng = rng_for(config.seed ^ 0x5eed_a0a0, epoch as u64);
        let mut total = 0.0;
        let order = batches(train.len(), config.batch_size, config.seed, epoch)?;
        for indices in &order {
            let mut pixels = train.gather(indices);
            augment(&mut pixels, train.shape(), policy, &mut aug_rng);
            let x = train.to_tensor::<S>(&pixels, indices.len());
            let y: Vec<usize> = indices.iter().map(|&i| train.labels()[i]).collect();
            let grads = model_backward(model, &x, &y)?;
            if !grads.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: grads.loss,
                });
            }
            total += grads.loss;
            sgd_step(model, &grads, state, lr, config);
        }
        if model.param_slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        summary.epochs_run += 1;
        summary.last_loss = total / order.len() as f64;
        hook(epoch + 1, model, state)?;
    }
    if let Some(test) = test {
        summary.test_accuracy = Some(evaluate_accuracy(model, test)?);
    }
    Ok(summary)
}

/// Predicted class per example; ties resolve to the lowest class index.
pub fn predict<S: Scalar>(model: &ModelGraph<S>, data: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(500) {
        let (x, _) = data.batch::<S>(chunk);
        let logits = model_forward(model, &x, false)?.logits;
        let classes = logits.dim(1);
        for row in logits.data().chunks(classes) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Top-1 accuracy in percent.
pub fn evaluate_accuracy<S: Scalar>(model: &ModelGraph<S>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let correct = predict(model, data)?
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}
