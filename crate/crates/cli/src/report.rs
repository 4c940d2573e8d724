//! `aap report`: plot-ready CSV extracted from a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aap_core::attention::AttentionReport;
use aap_core::checkpoint::Checkpoint;
use aap_core::controller::{trace_csv, ControllerEvent, RoundRecord};
use clap::ValueEnum;

use crate::run::{stability_points, ATTENTION_JSONL, CHECKPOINT_DIR, CONFIG_FILE, TRACE_JSONL};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    /// `round,T,lambda,acc_loss,param_red`
    Trace,
    /// `layer,active,total,sparsity_pct` of the latest model
    Sparsity,
    /// `layer,filter,score,batch_id` of the trained unpruned model
    Attention,
    /// `rewind_epoch,L2`
    Stability,
}

impl ReportKind {
    fn name(self) -> &'static str {
        match self {
            ReportKind::Trace => "trace",
            ReportKind::Sparsity => "sparsity",
            ReportKind::Attention => "attention",
            ReportKind::Stability => "stability",
        }
    }
}

/// Builds the report, writes it to `<run>/reports/<kind>.csv` and returns
/// the path and the CSV text.
pub fn cmd_report(run: &Path, kind: ReportKind) -> Result<(PathBuf, String), CliError> {
    if !run.join(CONFIG_FILE).is_file() {
        return Err(CliError::usage(format!("{} is not a run directory", run.display())));
    }
    let csv = match kind {
        ReportKind::Trace => trace_csv(&round_records(run)?),
        ReportKind::Sparsity => sparsity_csv(&latest_checkpoint(run)?),
        ReportKind::Attention => attention_csv(run)?,
        ReportKind::Stability => {
            let mut out = String::from("rewind_epoch,L2\n");
            for p in stability_points(run)? {
                let _ = writeln!(out, "{},{}", p.rewind_epoch, p.stability);
            }
            out
        }
    };
    let dir = run.join("reports");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join(format!("{}.csv", kind.name()));
    crate::run::write_text(&path, &csv)?;
    Ok((path, csv))
}

/// Round records in the order they were logged.
pub fn round_records(run: &Path) -> Result<Vec<RoundRecord>, CliError> {
    let path = run.join(TRACE_JSONL);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let event: ControllerEvent = serde_json::from_str(line)
            .map_err(|e| CliError::runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if let ControllerEvent::Round(r) = event {
            out.push(r);
        }
    }
    Ok(out)
}

/// `final.aap` when the run finished, otherwise the newest round checkpoint.
pub fn latest_checkpoint(run: &Path) -> Result<Checkpoint, CliError> {
    let dir = run.join(CHECKPOINT_DIR);
    let last = dir.join("final.aap");
    let path = if last.is_file() {
        last
    } else {
        let mut rounds: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("round-") && n.ends_with(".aap")))
            .collect();
        rounds.sort();
        rounds.pop().ok_or_else(|| CliError::runtime(format!("no checkpoints in {}", dir.display())))?
    };
    Checkpoint::load(&path).map_err(CliError::core)
}

pub fn sparsity_csv(ckpt: &Checkpoint) -> String {
    let mut out = String::from("layer,active,total,sparsity_pct\n");
    for (layer, mask) in &ckpt.masks {
        let (active, total) = (mask.active_count(), mask.len());
        let pct = 100.0 * (total - active) as f64 / total as f64;
        let _ = writeln!(out, "{layer},{active},{total},{pct}");
    }
    out
}

fn attention_csv(run: &Path) -> Result<String, CliError> {
    let path = run.join(ATTENTION_JSONL);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut out = String::from("layer,filter,score,batch_id\n");
    if let Some(line) = text.lines().find(|l| !l.trim().is_empty()) {
        let report: AttentionReport =
            serde_json::from_str(line).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        report.write_csv_rows(&mut out);
    }
    Ok(out)
}
