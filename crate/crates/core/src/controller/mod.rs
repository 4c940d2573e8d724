//! The pruning loop: score, prune, rewind, retrain, then adapt the threshold.
//!
//! Each round prunes every active filter whose attention is at or below its
//! layer's share of the global threshold `T`, rewinds the surviving weights to
//! the snapshot taken after `k` epochs, resets momentum, retrains epochs
//! `k..E` and evaluates. Acceptable rounds raise `T` by `λ`; unacceptable
//! ones roll back to the latest acceptable round with a smaller step.

mod backend;
mod policy;
mod stability;

pub use backend::{OracleBackend, Pretrained, PruningBackend, SubstrateBackend};
pub use policy::{
    adapt_threshold, check_convergence, classify, policy_accept, Objective, PolicyConfig, RollbackAction,
    RoundOutcome, ThresholdUpdate,
};
pub use stability::{stability, stability_sweep, StabilityPoint};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accounting::{local_thresholds, reductions, CostTable, Goal};
use crate::attention::AttentionReport;
use crate::checkpoint::{Checkpoint, CheckpointStore};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::nn::SgdState;
use crate::tensor::Scalar;

/// Everything known about one round once it has been retrained and evaluated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Round whose state this round started from.
    pub parent: usize,
    pub threshold: f64,
    pub lambda: f64,
    /// `(layer, local threshold)` per prunable layer.
    pub local_thresholds: Vec<(usize, f64)>,
    /// `(layer, filters pruned this round)`.
    pub pruned: Vec<(usize, usize)>,
    /// `(layer, active filters after pruning)`.
    pub active: Vec<(usize, usize)>,
    /// Layers where pruning stopped at the last surviving filter.
    pub exhausted_layers: Vec<usize>,
    pub accuracy: f64,
    pub acc_loss: f64,
    pub params: u64,
    pub flops: u64,
    pub param_red: f64,
    pub flops_red: f64,
    /// Absolute change of the goal reduction relative to the parent, in percent.
    pub size_change: f64,
    pub outcome: RoundOutcome,
    /// Value of [`policy_accept`] for this round.
    pub acceptable: bool,
    /// Times this round has been used as a rollback target.
    pub rollback_count: usize,
    pub marked_unacceptable: bool,
    /// Hash of weights and masks after retraining.
    pub state_hash: String,
}

impl RoundRecord {
    pub fn reduction(&self, goal: Goal) -> f64 {
        match goal {
            Goal::Params => self.param_red,
            Goal::Flops => self.flops_red,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackEvent {
    pub from_round: usize,
    pub to_round: usize,
    pub prior_rollbacks: usize,
    pub threshold: f64,
    pub lambda: f64,
    /// Hash recorded when the target round was saved.
    pub expected_hash: String,
    /// Hash of the model after restoring the target round.
    pub restored_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The model size stopped changing over the convergence window.
    Converged,
    /// Enough rounds met every reduction target.
    TargetReached,
    MaxRounds,
    /// No acceptable round was left to roll back to.
    NoAcceptableRound,
    /// Training diverged; the last good state is the final round.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ControllerEvent {
    Round(RoundRecord),
    Rollback(RollbackEvent),
    Marked { round: usize },
    Terminated { reason: Termination, final_round: usize },
}

/// Where a pruning run starts.
#[derive(Debug, Clone)]
pub enum Start<S: Scalar> {
    /// Untrained model: the backend pretrains it first.
    Fresh(ModelGraph<S>),
    /// Already trained to the end of the schedule, with its rewind snapshot.
    Pretrained { model: ModelGraph<S>, rewind: Checkpoint },
}

#[derive(Debug, Clone)]
pub struct PruningOutcome<S: Scalar> {
    /// The selected pruned model.
    pub model: ModelGraph<S>,
    pub final_round: usize,
    /// Fully trained unpruned weights.
    pub original: ModelGraph<S>,
    pub rewind: Checkpoint,
    pub baseline_accuracy: f64,
    pub baseline_costs: CostTable,
    pub final_costs: CostTable,
    pub history: Vec<RoundRecord>,
    pub rollbacks: Vec<RollbackEvent>,
    pub attention: Vec<AttentionReport>,
    pub termination: Termination,
}

impl<S: Scalar> PruningOutcome<S> {
    pub fn final_record(&self) -> &RoundRecord {
        &self.history[self.final_round]
    }
}

/// Hash of weights and masks only.
pub fn state_hash<S: Scalar>(model: &ModelGraph<S>) -> String {
    let ckpt = Checkpoint::capture(model, None, 0, 0, serde_json::Value::Null);
    let mut h = Sha256::new();
    for t in &ckpt.tensors {
        h.update(t.name.as_bytes());
        h.update(&t.bytes);
    }
    for (layer, mask) in &ckpt.masks {
        h.update((*layer as u64).to_le_bytes());
        h.update(mask.to_packed());
    }
    hex::encode(h.finalize())
}

/// Fixed inputs of a round.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub policy: &'a PolicyConfig,
    pub rewind: &'a Checkpoint,
    pub rewind_epoch: usize,
    pub baseline_costs: &'a CostTable,
    pub baseline_accuracy: f64,
}

/// Runs one round on `model` (which holds the parent's state) and returns its
/// record and the attention scores it pruned with.
#[allow(clippy::too_many_arguments)]
pub fn execute_round<S: Scalar, B: PruningBackend<S> + ?Sized>(
    model: &mut ModelGraph<S>,
    opt: &mut SgdState<S>,
    backend: &mut B,
    ctx: &RoundContext<'_>,
    parent: &RoundRecord,
    round: usize,
    threshold: f64,
    lambda: f64,
) -> Result<(RoundRecord, AttentionReport)> {
    let goal = ctx.policy.goal();
    let report = backend.attention(model, round)?;
    let locals = local_thresholds(&CostTable::of(model), threshold, goal);
    let mut pruned = Vec::new();
    let mut exhausted_layers = Vec::new();
    for &(layer, local) in &locals {
        let mut selected: Vec<(usize, f64)> = report
            .layer(layer)
            .map(|l| l.scores.iter().copied().filter(|&(_, s)| s <= local).collect())
            .unwrap_or_default();
        selected.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let filters: Vec<usize> = selected.iter().map(|&(f, _)| f).collect();
        let outcome = model.prune_filters(layer, &filters)?;
        pruned.push((layer, outcome.pruned.len()));
        if let Some(l) = outcome.exhausted {
            exhausted_layers.push(l);
        }
    }

    let masks = model.masks();
    ctx.rewind.restore(model, Some(opt))?;
    opt.reset();
    model.set_masks(masks)?;
    let accuracy = backend.retrain(model, opt, ctx.rewind_epoch)?;

    let costs = CostTable::of(model);
    let red = reductions(&costs, ctx.baseline_costs);
    let acc_loss = ctx.baseline_accuracy - accuracy;
    let mut record = RoundRecord {
        round,
        parent: parent.round,
        threshold,
        lambda,
        local_thresholds: locals,
        pruned,
        active: model.masks().iter().map(|(l, m)| (*l, m.active_count())).collect(),
        exhausted_layers,
        accuracy,
        acc_loss,
        params: costs.total_params,
        flops: costs.total_flops,
        param_red: red.params_pct,
        flops_red: red.flops_pct,
        size_change: (red.get(goal) - parent.reduction(goal)).abs(),
        outcome: classify(acc_loss, red.params_pct, red.flops_pct, ctx.policy),
        state_hash: state_hash(model),
        ..RoundRecord::default()
    };
    record.acceptable = policy_accept(&record, ctx.policy);
    Ok((record, report))
}

/// The round reported as the result.
///
/// With reduction targets, the most accurate round that met them (ties: the
/// earliest). Otherwise, or if no round met them, the
/// acceptable round with the largest goal reduction (ties: higher accuracy,
/// then earlier).
pub fn best_round(history: &[RoundRecord], policy: &PolicyConfig) -> usize {
    let goal = policy.goal();
    let met: Vec<&RoundRecord> = history.iter().filter(|r| r.outcome == RoundOutcome::TargetMet).collect();
    let better_acc = |a: &RoundRecord, b: &RoundRecord| a.accuracy > b.accuracy;
    let better_red = |a: &RoundRecord, b: &RoundRecord| {
        a.reduction(goal) > b.reduction(goal) || (a.reduction(goal) == b.reduction(goal) && a.accuracy > b.accuracy)
    };
    let mut best: Option<&RoundRecord> = None;
    if !met.is_empty() {
        for r in met {
            if best.is_none_or(|b| better_acc(r, b)) {
                best = Some(r);
            }
        }
    } else {
        for r in history.iter().filter(|r| r.outcome == RoundOutcome::Continue) {
            if best.is_none_or(|b| better_red(r, b)) {
                best = Some(r);
            }
        }
    }
    best.map_or(0, |r| r.round)
}

/// Callback receiving controller events as they happen.
pub type EventSink<'a> = dyn FnMut(&ControllerEvent) -> Result<()> + 'a;

/// Runs the full pruning loop. Checkpoints go to `store`: `rewind.aap`,
/// `baseline.aap`, one file per live round and `final.aap`.
pub fn run_pruning<S: Scalar, B: PruningBackend<S> + ?Sized>(
    start: Start<S>,
    backend: &mut B,
    policy: &PolicyConfig,
    store: &CheckpointStore,
    sink: &mut EventSink<'_>,
) -> Result<PruningOutcome<S>> {
    let total_epochs = backend.total_epochs();
    policy.validate(total_epochs)?;
    let rewind_epoch = policy.rewind_epoch_for(total_epochs);

    let (mut model, rewind, baseline_accuracy) = match start {
        Start::Fresh(mut model) => {
            let mut opt = SgdState::new(&model);
            let pre = backend.pretrain(&mut model, &mut opt, rewind_epoch)?;
            (model, pre.rewind, pre.accuracy)
        }
        Start::Pretrained { model, rewind } => {
            let acc = backend.evaluate(&model)?;
            (model, rewind, acc)
        }
    };
    let original = model.clone();
    let mut opt = SgdState::new(&model);
    rewind.save(&store.named_path("rewind"))?;
    Checkpoint::capture(&model, None, total_epochs, 0, serde_json::Value::Null).save(&store.named_path("baseline"))?;

    let baseline_costs = CostTable::of(&model);
    let mut round0 = RoundRecord {
        round: 0,
        parent: 0,
        threshold: policy.t0 - policy.lambda0,
        lambda: policy.lambda0,
        active: model.masks().iter().map(|(l, m)| (*l, m.active_count())).collect(),
        accuracy: baseline_accuracy,
        params: baseline_costs.total_params,
        flops: baseline_costs.total_flops,
        outcome: classify(0.0, 0.0, 0.0, policy),
        state_hash: state_hash(&model),
        ..RoundRecord::default()
    };
    round0.acceptable = policy_accept(&round0, policy);
    save_round(store, &model, &round0, total_epochs)?;
    sink(&ControllerEvent::Round(round0.clone()))?;
    let mut history = vec![round0];
    let mut rollbacks = Vec::new();
    let mut attention = Vec::new();

    let ctx = RoundContext {
        policy,
        rewind: &rewind,
        rewind_epoch,
        baseline_costs: &baseline_costs,
        baseline_accuracy,
    };
    let (mut threshold, mut lambda, mut parent) = (policy.t0, policy.lambda0, 0usize);
    let mut rolled_back = false;
    let mut target_rounds = 0usize;
    let mut termination = if history[0].outcome == RoundOutcome::TargetMet {
        Some(Termination::TargetReached)
    } else {
        None
    };
    let mut round = 0;
    while termination.is_none() {
        round += 1;
        let parent_record = history[parent].clone();
        let (record, report) =
            match execute_round(&mut model, &mut opt, backend, &ctx, &parent_record, round, threshold, lambda) {
                Ok(v) => v,
                Err(e @ Error::Diverged { .. }) => {
                    sink(&ControllerEvent::Terminated {
                        reason: Termination::Diverged,
                        final_round: parent,
                    })?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
        attention.push(report);
        save_round(store, &model, &record, total_epochs)?;
        sink(&ControllerEvent::Round(record.clone()))?;
        let outcome = record.outcome;
        history.push(record);

        match outcome {
            RoundOutcome::Continue if rolled_back && check_convergence(&history, policy) => {
                termination = Some(Termination::Converged);
                break;
            }
            RoundOutcome::TargetMet => {
                target_rounds += 1;
                if target_rounds >= policy.convergence_window {
                    termination = Some(Termination::TargetReached);
                    break;
                }
            }
            _ => {}
        }
        if round >= policy.max_rounds {
            termination = Some(Termination::MaxRounds);
            break;
        }

        let update = match adapt_threshold(&history, policy) {
            Ok(u) => u,
            Err(_) => {
                termination = Some(Termination::NoAcceptableRound);
                break;
            }
        };
        let keep = best_round(&history, policy);
        for &m in &update.newly_marked {
            history[m].marked_unacceptable = true;
            sink(&ControllerEvent::Marked { round: m })?;
            if m != keep {
                store.discard_round(m)?;
            }
        }
        match update.action {
            RollbackAction::None => parent = round,
            RollbackAction::Rollback {
                to_round,
                prior_rollbacks,
            } => {
                let ckpt = store.load_round(to_round)?;
                ckpt.restore(&mut model, Some(&mut opt))?;
                history[to_round].rollback_count += 1;
                let event = RollbackEvent {
                    from_round: round,
                    to_round,
                    prior_rollbacks,
                    threshold: update.threshold,
                    lambda: update.lambda,
                    expected_hash: history[to_round].state_hash.clone(),
                    restored_hash: state_hash(&model),
                };
                if event.expected_hash != event.restored_hash {
                    return Err(Error::invalid(format!(
                        "round {to_round} restored to a different state than was saved"
                    )));
                }
                sink(&ControllerEvent::Rollback(event.clone()))?;
                rollbacks.push(event);
                if outcome == RoundOutcome::Violated {
                    store.discard_round(round)?;
                }
                parent = to_round;
                rolled_back = true;
            }
        }
        threshold = update.threshold;
        lambda = update.lambda;
    }
    let termination = termination.expect("loop ends with a reason");

    let final_round = best_round(&history, policy);
    store.load_round(final_round)?.restore(&mut model, None)?;
    let final_costs = CostTable::of(&model);
    let meta = serde_json::to_value(&history[final_round])?;
    Checkpoint::capture(&model, None, total_epochs, final_round, meta).save(&store.named_path("final"))?;
    sink(&ControllerEvent::Terminated {
        reason: termination,
        final_round,
    })?;
    Ok(PruningOutcome {
        model,
        final_round,
        original,
        rewind,
        baseline_accuracy,
        baseline_costs,
        final_costs,
        history,
        rollbacks,
        attention,
        termination,
    })
}

fn save_round<S: Scalar>(store: &CheckpointStore, model: &ModelGraph<S>, record: &RoundRecord, epoch: usize) -> Result<String> {
    let meta = serde_json::to_value(record)?;
    store.save_round(&Checkpoint::capture(model, None, epoch, record.round, meta))
}

/// `round,T,lambda,acc_loss,param_red`, one row per round of `history`.
pub fn trace_csv(history: &[RoundRecord]) -> String {
    let mut out = String::from("round,T,lambda,acc_loss,param_red\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{}", r.round, r.threshold, r.lambda, r.acc_loss, r.param_red);
    }
    out
}
