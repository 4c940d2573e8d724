//! Filter importance scores.
//!
//! The attention of a filter is computed on its post-ReLU activation map `A`
//! (`h x w`, or `1 x 1` for a linear unit):
//!
//! - mean: `(1 / (h*w)) * Σ |a|^p`
//! - max:  `max |a|^p`
//! - sum:  `Σ |a|^p`
//!
//! Scores come from one randomly drawn batch of training images: each image
//! is scored separately, then scores are averaged over the batch. Only active
//! filters are scored.
//!
//! The L1 weight criteria (`Σ|w|`, optionally divided by `n_in * k * k`) are
//! provided as baselines.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{rng_for, Dataset};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::nn::model_forward;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionFn {
    #[default]
    Mean,
    Max,
    Sum,
}

/// How filters are ranked for pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Activation attention (the default).
    #[default]
    Attention,
    /// L1 norm of the filter weights.
    Ilp,
    /// L1 norm divided by the filter size.
    IlpMean,
}

fn default_power() -> f64 {
    1.0
}

fn default_batch_size() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    #[serde(default)]
    pub function: AttentionFn,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default)]
    pub batch_seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub criterion: Criterion,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            function: AttentionFn::Mean,
            power: 1.0,
            batch_seed: 0,
            batch_size: default_batch_size(),
            criterion: Criterion::Attention,
        }
    }
}

impl AttentionConfig {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.power >= 1.0 && self.power.is_finite()) {
            return Err(("power", "must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be >= 1".into()));
        }
        Ok(())
    }
}

/// Attention value of one activation map.
pub fn attention_value<S: Scalar>(map: &[S], function: AttentionFn, power: f64) -> Result<f64> {
    if map.is_empty() {
        return Err(Error::invalid("attention of an empty activation map"));
    }
    let pow = |v: S| {
        let a = v.as_f64().abs();
        if power == 1.0 {
            a
        } else {
            a.powf(power)
        }
    };
    Ok(match function {
        AttentionFn::Sum => map.iter().map(|&v| pow(v)).sum(),
        AttentionFn::Mean => map.iter().map(|&v| pow(v)).sum::<f64>() / map.len() as f64,
        AttentionFn::Max => map.iter().map(|&v| pow(v)).fold(0.0, f64::max),
    })
}

/// Scores of the active filters of one prunable layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScores {
    pub layer: usize,
    /// `(filter index, score)` in ascending filter order.
    pub scores: Vec<(usize, f64)>,
}

impl LayerScores {
    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|&(_, s)| s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub round: usize,
    pub batch_id: u64,
    pub layers: Vec<LayerScores>,
}

impl AttentionReport {
    pub fn layer(&self, layer: usize) -> Option<&LayerScores> {
        self.layers.iter().find(|l| l.layer == layer)
    }

    /// `layer,filter,score,batch_id`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,filter,score,batch_id\n");
        self.write_csv_rows(&mut out);
        out
    }

    pub fn write_csv_rows(&self, out: &mut String) {
        for l in &self.layers {
            for &(f, s) in &l.scores {
                let _ = writeln!(out, "{},{},{},{}", l.layer, f, s, self.batch_id);
            }
        }
    }
}

/// Per-filter attention averaged over the examples of `batch`.
pub fn attentions_for_batch<S: Scalar>(
    model: &ModelGraph<S>,
    batch: &Tensor<S>,
    config: &AttentionConfig,
) -> Result<Vec<LayerScores>> {
    let out = model_forward(model, batch, true)?;
    let n = batch.dim(0);
    out.activations
        .iter()
        .map(|(layer, act)| {
            let mask = model.mask(*layer).expect("prunable layer has a mask");
            let per_image = act.len() / n;
            let map_len = per_image / mask.len();
            let scores = mask
                .active_indices()
                .map(|f| {
                    let mut acc = 0.0;
                    for b in 0..n {
                        let image = act.outer(b);
                        acc += attention_value(&image[f * map_len..(f + 1) * map_len], config.function, config.power)?;
                    }
                    Ok((f, acc / n as f64))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerScores { layer: *layer, scores })
        })
        .collect()
}

/// Draws `config.batch_size` distinct training examples using `config.batch_seed`.
pub fn attention_batch_indices(len: usize, config: &AttentionConfig) -> Result<Vec<usize>> {
    if config.batch_size == 0 || config.batch_size > len {
        return Err(Error::invalid(format!(
            "attention batch of {} from a dataset of {len}",
            config.batch_size
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(config.batch_seed, 0xa77e));
    order.truncate(config.batch_size);
    Ok(order)
}

/// Scores every active filter of every prunable layer on one random batch
/// (no augmentation). With an L1 criterion the data is not used.
pub fn evaluate_model_attentions<S: Scalar>(
    model: &ModelGraph<S>,
    data: &Dataset,
    config: &AttentionConfig,
    round: usize,
) -> Result<AttentionReport> {
    let layers = match config.criterion {
        Criterion::Attention => {
            let indices = attention_batch_indices(data.len(), config)?;
            let (x, _) = data.batch::<S>(&indices);
            attentions_for_batch(model, &x, config)?
        }
        Criterion::Ilp => l1_scores(model, false),
        Criterion::IlpMean => l1_scores(model, true),
    };
    Ok(AttentionReport {
        round,
        batch_id: config.batch_seed,
        layers,
    })
}

/// `Σ|w|`, or `Σ|w| / len` when normalized by the filter size `n_in * k * k`.
pub fn l1_criterion<S: Scalar>(filter_weights: &[S], normalize_by_size: bool) -> f64 {
    let sum: f64 = filter_weights.iter().map(|v| v.as_f64().abs()).sum();
    if normalize_by_size && !filter_weights.is_empty() {
        sum / filter_weights.len() as f64
    } else {
        sum
    }
}

/// L1 scores of active filters. Normalization uses the full (unmasked)
/// filter size; pruned upstream channels contribute zeros to the sum.
pub fn l1_scores<S: Scalar>(model: &ModelGraph<S>, normalize_by_size: bool) -> Vec<LayerScores> {
    model
        .prunable_layers()
        .into_iter()
        .map(|layer| {
            let mask = model.mask(layer).unwrap();
            let w = model.layer(layer).weight.as_ref().unwrap();
            let scores = mask
                .active_indices()
                .map(|f| (f, l1_criterion(w.outer(f), normalize_by_size)))
                .collect();
            LayerScores { layer, scores }
        })
        .collect()
}
