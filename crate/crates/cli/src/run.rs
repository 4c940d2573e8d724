//! `aap run`: drives a full pruning run and fills the run directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use aap_core::checkpoint::CheckpointStore;
use aap_core::controller::{
    run_pruning, stability_sweep, trace_csv, ControllerEvent, OracleBackend, PruningBackend, PruningOutcome,
    StabilityPoint, Start, SubstrateBackend, Termination,
};
use aap_core::data::Dataset;
use aap_core::tensor::Dtype;
use aap_core::{Architecture, Scalar};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TrainerKind};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const TRACE_JSONL: &str = "trace.jsonl";
pub const TRACE_CSV: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ATTENTION_JSONL: &str = "attention.jsonl";
pub const STABILITY_FILE: &str = "stability.json";
pub const COSTS_CSV: &str = "costs.csv";
pub const BASELINE_COSTS_CSV: &str = "baseline_costs.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acc_loss_pct: f64,
    pub params_red_pct: f64,
    pub flops_red_pct: f64,
    /// Pruning rounds executed (round 0 excluded).
    pub rounds: usize,
    /// Seconds.
    pub wall_time: f64,
    pub baseline_accuracy: f64,
    pub final_accuracy: f64,
    pub final_round: usize,
    pub rollbacks: usize,
    pub termination: Termination,
}

/// Runs the configured experiment. `output` overrides `output_dir`.
pub fn cmd_run(config_path: &Path, output: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", config_path.display())))?;
    let mut config = crate::config::parse_config(&text).map_err(CliError::config)?;
    config.validate().map_err(CliError::config)?;
    if let Some(dir) = output {
        config.output_dir = dir;
    }
    let arch = config.architecture().map_err(CliError::config)?;
    let (train, test) = config.load_data(&arch).map_err(CliError::config)?;

    let dir = config.output_dir.clone();
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_json(&dir.join(CONFIG_FILE), &config)?;

    match config.dtype {
        Dtype::F32 => run_typed::<f32>(&config, &arch, train, test, &dir)?,
        Dtype::F64 => run_typed::<f64>(&config, &arch, train, test, &dir)?,
    }
    Ok(dir)
}

fn run_typed<S: Scalar>(
    config: &RunConfig,
    arch: &Architecture,
    train: Dataset,
    test: Dataset,
    dir: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let model = arch.build::<S>(config.seed).map_err(CliError::core)?;
    let store = CheckpointStore::new(dir.join(CHECKPOINT_DIR)).map_err(CliError::core)?;
    let trace_path = dir.join(TRACE_JSONL);
    let mut trace = BufWriter::new(File::create(&trace_path).map_err(|e| CliError::io(&trace_path, e))?);
    let mut sink = |event: &ControllerEvent| -> aap_core::Result<()> {
        serde_json::to_writer(&mut trace, event)?;
        trace.write_all(b"\n")?;
        trace.flush()?;
        Ok(())
    };

    let (outcome, stability) = match config.trainer {
        TrainerKind::Substrate => {
            let mut backend = SubstrateBackend::new(train, test, config.train.clone(), config.attention.clone());
            backend.snapshot_epochs = config.analysis.stability_rewind_epochs.clone();
            let outcome = drive(&mut backend, model, config, &store, &mut sink)?;
            let stability = if backend.snapshots.is_empty() {
                Vec::new()
            } else {
                stability_sweep(
                    &outcome.original,
                    &backend.snapshots,
                    &outcome.model.masks(),
                    &backend.train,
                    &config.train,
                )
                .map_err(CliError::core)?
            };
            (outcome, stability)
        }
        TrainerKind::Oracle => {
            let spec = config.oracle.expect("validated");
            let mut backend = OracleBackend::new(spec, train, config.attention.clone(), config.train.total_epochs);
            (drive(&mut backend, model, config, &store, &mut sink)?, Vec::new())
        }
    };

    write_text(&dir.join(TRACE_CSV), &trace_csv(&outcome.history))?;
    write_text(&dir.join(COSTS_CSV), &outcome.final_costs.to_csv())?;
    write_text(&dir.join(BASELINE_COSTS_CSV), &outcome.baseline_costs.to_csv())?;
    write_attention(dir, &outcome)?;
    write_json(&dir.join(STABILITY_FILE), &stability)?;

    let last = outcome.final_record();
    let summary = Summary {
        acc_loss_pct: last.acc_loss,
        params_red_pct: last.param_red,
        flops_red_pct: last.flops_red,
        rounds: outcome.history.len() - 1,
        wall_time: started.elapsed().as_secs_f64(),
        baseline_accuracy: outcome.baseline_accuracy,
        final_accuracy: last.accuracy,
        final_round: outcome.final_round,
        rollbacks: outcome.rollbacks.len(),
        termination: outcome.termination,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(())
}

fn drive<S: Scalar, B: PruningBackend<S>>(
    backend: &mut B,
    model: aap_core::ModelGraph<S>,
    config: &RunConfig,
    store: &CheckpointStore,
    sink: &mut aap_core::controller::EventSink<'_>,
) -> Result<PruningOutcome<S>, CliError> {
    run_pruning(Start::Fresh(model), backend, &config.policy, store, sink).map_err(|e| match e {
        aap_core::Error::Diverged { .. } => CliError::diverged(format!(
            "{e}; the last good round is named in {TRACE_JSONL} and its checkpoint is kept"
        )),
        other => CliError::core(other),
    })
}

/// One JSON line per pruning round with the scores it pruned by.
fn write_attention<S: Scalar>(dir: &Path, outcome: &PruningOutcome<S>) -> Result<(), CliError> {
    let path = dir.join(ATTENTION_JSONL);
    let mut out = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
    for r in &outcome.attention {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::io(&path, e.into()))?;
        out.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
    }
    out.flush().map_err(|e| CliError::io(&path, e))
}

/// Points of the stability sweep recorded in a run directory.
pub fn stability_points(dir: &Path) -> Result<Vec<StabilityPoint>, CliError> {
    read_json(&dir.join(STABILITY_FILE))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e.into()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e.into()))
}
