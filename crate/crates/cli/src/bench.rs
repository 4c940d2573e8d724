//! `aap bench`: forward latency of the masked model against its compacted form.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aap_core::accounting::CostTable;
use aap_core::checkpoint::Checkpoint;
use aap_core::nn::model_forward;
use aap_core::tensor::Dtype;
use aap_core::{ModelGraph, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::run::CHECKPOINT_DIR;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub min_ms: f64,
    /// Sample standard deviation; absent for a single trial.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub checkpoint: PathBuf,
    pub trials: usize,
    pub batch: usize,
    pub masked: Timing,
    pub compacted: Timing,
    /// `masked.mean_ms / compacted.mean_ms`
    pub speedup_mean: f64,
    /// `masked.min_ms / compacted.min_ms`
    pub speedup_min: f64,
    pub params: u64,
    pub flops: u64,
    pub baseline_flops: u64,
    /// Largest relative difference between the two models' logits.
    pub max_rel_diff: f64,
}

fn timing(samples: &[f64]) -> Timing {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let std_ms = (samples.len() > 1)
        .then(|| (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Timing {
        mean_ms: mean,
        min_ms: min,
        std_ms,
    }
}

/// `target` is a checkpoint file or a run directory (its final checkpoint).
pub fn cmd_bench(target: &Path, trials: usize, batch: usize) -> Result<BenchReport, CliError> {
    if trials == 0 || batch == 0 {
        return Err(CliError::usage("trials and batch must be >= 1"));
    }
    let path = if target.is_dir() {
        target.join(CHECKPOINT_DIR).join("final.aap")
    } else {
        target.to_path_buf()
    };
    let ckpt = Checkpoint::load(&path).map_err(CliError::core)?;
    let mut report = match ckpt.dtype {
        Dtype::F32 => bench_typed::<f32>(&ckpt, trials, batch)?,
        Dtype::F64 => bench_typed::<f64>(&ckpt, trials, batch)?,
    };
    report.checkpoint = path;
    Ok(report)
}

fn time_forward<S: Scalar>(model: &ModelGraph<S>, x: &Tensor<S>) -> Result<(f64, Tensor<S>), CliError> {
    let start = Instant::now();
    let out = model_forward(model, x, false).map_err(CliError::core)?;
    Ok((start.elapsed().as_secs_f64() * 1e3, out.logits))
}

fn bench_typed<S: Scalar>(ckpt: &Checkpoint, trials: usize, batch: usize) -> Result<BenchReport, CliError> {
    let mut masked: ModelGraph<S> = ckpt.architecture.build(0).map_err(CliError::core)?;
    let baseline_flops = CostTable::of(&masked).total_flops;
    ckpt.restore(&mut masked, None).map_err(CliError::core)?;
    let compacted = masked.compact();
    let costs = CostTable::of(&compacted);

    let [c, h, w] = masked.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
    let data = (0..batch * c * h * w).map(|_| S::from_f64_lossy(rng.gen_range(-1.0..1.0))).collect();
    let x = Tensor::from_vec(&[batch, c, h, w], data).map_err(CliError::core)?;

    let (_, reference) = time_forward(&masked, &x)?;
    let (_, small) = time_forward(&compacted, &x)?;
    let max_rel_diff = reference
        .data()
        .iter()
        .zip(small.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs() / a.as_f64().abs().max(1e-12))
        .fold(0.0, f64::max);

    let (mut tm, mut tc) = (Vec::with_capacity(trials), Vec::with_capacity(trials));
    for _ in 0..trials {
        tm.push(time_forward(&masked, &x)?.0);
        tc.push(time_forward(&compacted, &x)?.0);
    }
    let (masked_t, compact_t) = (timing(&tm), timing(&tc));
    Ok(BenchReport {
        checkpoint: PathBuf::new(),
        trials,
        batch,
        speedup_mean: masked_t.mean_ms / compact_t.mean_ms,
        speedup_min: masked_t.min_ms / compact_t.min_ms,
        masked: masked_t,
        compacted: compact_t,
        params: costs.total_params,
        flops: costs.total_flops,
        baseline_flops,
        max_rel_diff,
    })
}
