//! Parameter and FLOP estimates on masked dimensions, and layer-aware thresholds.
//!
//! Per parameterized layer `i` with effective input channels `n_in`, kernel
//! `k` and active filters `n_out`:
//!
//! - `N = n_in * k * k * n_out` (linear layers use `k = 1`)
//! - `F = 2 * h * w * N`, with `h x w` the output spatial size (1x1 for linear)
//!
//! Biases and ReLU/pooling work are not counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::{LayerKind, ModelGraph};
use crate::tensor::Scalar;

pub fn layer_params(n_in: usize, k: usize, n_out: usize) -> u64 {
    n_in as u64 * k as u64 * k as u64 * n_out as u64
}

pub fn layer_flops(h: usize, w: usize, params: u64) -> u64 {
    2 * h as u64 * w as u64 * params
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub prunable: bool,
    pub n_in: usize,
    pub n_out: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_flops: u64,
}

/// Which per-layer cost drives the local threshold weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Goal {
    #[default]
    Params,
    Flops,
}

impl CostTable {
    pub fn of<S: Scalar>(model: &ModelGraph<S>) -> Self {
        let layers: Vec<LayerCost> = model
            .active_counts()
            .into_iter()
            .map(|c| {
                let spec = model.layer(c.layer).spec;
                let (h, w) = match spec.kind {
                    LayerKind::Conv2d { .. } => {
                        let s = model.output_shape(c.layer);
                        (s[1], s[2])
                    }
                    _ => (1, 1),
                };
                let k = spec.kind.kernel();
                let params = layer_params(c.active_in, k, c.active_filters);
                LayerCost {
                    layer: c.layer,
                    prunable: spec.prunable,
                    n_in: c.active_in,
                    n_out: c.active_filters,
                    k,
                    h,
                    w,
                    params,
                    flops: layer_flops(h, w, params),
                }
            })
            .collect();
        Self {
            total_params: layers.iter().map(|l| l.params).sum(),
            total_flops: layers.iter().map(|l| l.flops).sum(),
            layers,
        }
    }

    pub fn cost(&self, layer: &LayerCost, goal: Goal) -> u64 {
        match goal {
            Goal::Params => layer.params,
            Goal::Flops => layer.flops,
        }
    }

    pub fn total(&self, goal: Goal) -> u64 {
        match goal {
            Goal::Params => self.total_params,
            Goal::Flops => self.total_flops,
        }
    }

    /// Sum of `goal` over prunable layers only.
    pub fn prunable_total(&self, goal: Goal) -> u64 {
        self.layers.iter().filter(|l| l.prunable).map(|l| self.cost(l, goal)).sum()
    }

    /// `layer,prunable,n_in,n_out,k,h,w,params,flops`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,prunable,n_in,n_out,k,h,w,params,flops\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                l.layer, l.prunable, l.n_in, l.n_out, l.k, l.h, l.w, l.params, l.flops
            );
        }
        out
    }
}

/// Per prunable layer `(layer, T * cost_i / sum of prunable costs)`.
pub fn local_thresholds(table: &CostTable, global_t: f64, goal: Goal) -> Vec<(usize, f64)> {
    let total = table.prunable_total(goal) as f64;
    table
        .layers
        .iter()
        .filter(|l| l.prunable)
        .map(|l| {
            let weight = if total > 0.0 {
                table.cost(l, goal) as f64 / total
            } else {
                0.0
            };
            (l.layer, global_t * weight)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reductions {
    pub params_pct: f64,
    pub flops_pct: f64,
}

impl Reductions {
    pub fn get(&self, goal: Goal) -> f64 {
        match goal {
            Goal::Params => self.params_pct,
            Goal::Flops => self.flops_pct,
        }
    }
}

/// `100 * (1 - now / baseline)` for parameters and FLOPs.
pub fn reductions(now: &CostTable, baseline: &CostTable) -> Reductions {
    let pct = |a: u64, b: u64| {
        if b == 0 {
            0.0
        } else {
            100.0 * (1.0 - a as f64 / b as f64)
        }
    };
    Reductions {
        params_pct: pct(now.total_params, baseline.total_params),
        flops_pct: pct(now.total_flops, baseline.total_flops),
    }
}
