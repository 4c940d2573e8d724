//! Deterministic stand-in for the train/evaluate cycle.
//!
//! Maps a model's parameter reduction to a synthetic accuracy so the
//! controller's rollback and threshold logic can be exercised in
//! milliseconds, while masks and accounting stay real.

use serde::{Deserialize, Serialize};

use crate::data::rng_for;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OracleCurve {
    /// `plateau` up to and including `knee`, `plateau - drop` beyond it.
    Step { plateau: f64, knee: f64, drop: f64 },
    /// Logistic fall of `drop` centred on `knee`, shifted so that zero
    /// reduction gives exactly `plateau`.
    Logistic {
        plateau: f64,
        knee: f64,
        drop: f64,
        width: f64,
    },
    /// Flat until `knee`, then falls by `slope` per percent of reduction.
    PiecewiseLinear { plateau: f64, knee: f64, slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub curve: OracleCurve,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl OracleSpec {
    pub fn step(plateau: f64, knee: f64, drop: f64) -> Self {
        Self {
            curve: OracleCurve::Step { plateau, knee, drop },
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn plateau(&self) -> f64 {
        match self.curve {
            OracleCurve::Step { plateau, .. }
            | OracleCurve::Logistic { plateau, .. }
            | OracleCurve::PiecewiseLinear { plateau, .. } => plateau,
        }
    }

    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(("noise_std", "must be >= 0".into()));
        }
        let ok = match self.curve {
            OracleCurve::Step { drop, .. } => drop >= 0.0,
            OracleCurve::Logistic { drop, width, .. } => drop >= 0.0 && width > 0.0,
            OracleCurve::PiecewiseLinear { slope, .. } => slope >= 0.0,
        };
        if !ok {
            return Err(("curve", "must be non-increasing (drop/slope >= 0, width > 0)".into()));
        }
        Ok(())
    }
}

/// Synthetic accuracy (percent) at a given parameter reduction (percent).
///
/// Deterministic per `(spec, reduction)`: noise is seeded by both.
pub fn oracle_evaluate(spec: &OracleSpec, params_reduction_pct: f64) -> f64 {
    let x = params_reduction_pct.clamp(0.0, 100.0);
    let base = match spec.curve {
        OracleCurve::Step { plateau, knee, drop } => {
            if x <= knee {
                plateau
            } else {
                plateau - drop
            }
        }
        OracleCurve::Logistic {
            plateau,
            knee,
            drop,
            width,
        } => {
            let sigmoid = |v: f64| 1.0 / (1.0 + (-(v - knee) / width).exp());
            let s0 = sigmoid(0.0);
            plateau - drop * (sigmoid(x) - s0) / (1.0 - s0)
        }
        OracleCurve::PiecewiseLinear { plateau, knee, slope } => plateau - slope * (x - knee).max(0.0),
    };
    if spec.noise_std == 0.0 {
        return base;
    }
    let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
    base + noise.sample(&mut rng_for(spec.seed, x.to_bits()))
}
