//! Target policies and threshold adaptation.

use serde::{Deserialize, Serialize};

use crate::accounting::Goal;
use crate::error::{Error, Result};

use super::RoundRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Smallest model whose accuracy loss stays below `acc_loss_target`.
    AccuracyGuaranteed,
    /// Reach `param_target` percent parameter reduction.
    MemoryConstrained,
    /// Reach `flops_target` percent FLOP reduction.
    FlopsConstrained,
    /// Every configured target at once.
    Multi,
}

fn default_lambda0() -> f64 {
    0.01
}
fn default_window() -> usize {
    3
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_retries() -> usize {
    3
}
fn default_max_rounds() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub objective: Objective,
    #[serde(default)]
    pub acc_loss_target: Option<f64>,
    #[serde(default)]
    pub param_target: Option<f64>,
    #[serde(default)]
    pub flops_target: Option<f64>,
    /// Cost that drives layer weights and convergence for the accuracy and
    /// multi objectives.
    #[serde(default)]
    pub minimize_metric: Goal,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_window")]
    pub convergence_window: usize,
    /// Percent of the baseline model size.
    #[serde(default = "default_epsilon")]
    pub convergence_epsilon: f64,
    #[serde(default = "default_retries")]
    pub rollback_retry_limit: usize,
    /// Defaults to `ceil(0.8 * E)`.
    #[serde(default)]
    pub rewind_epoch: Option<usize>,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
}

impl PolicyConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            acc_loss_target: None,
            param_target: None,
            flops_target: None,
            minimize_metric: Goal::Params,
            t0: 0.0,
            lambda0: default_lambda0(),
            convergence_window: default_window(),
            convergence_epsilon: default_epsilon(),
            rollback_retry_limit: default_retries(),
            rewind_epoch: None,
            max_rounds: default_max_rounds(),
        }
    }

    pub fn accuracy_guaranteed(acc_loss_target: f64) -> Self {
        Self {
            acc_loss_target: Some(acc_loss_target),
            ..Self::new(Objective::AccuracyGuaranteed)
        }
    }

    pub fn memory_constrained(param_target: f64) -> Self {
        Self {
            param_target: Some(param_target),
            ..Self::new(Objective::MemoryConstrained)
        }
    }

    pub fn flops_constrained(flops_target: f64) -> Self {
        Self {
            flops_target: Some(flops_target),
            ..Self::new(Objective::FlopsConstrained)
        }
    }

    pub fn rewind_epoch_for(&self, total_epochs: usize) -> usize {
        self.rewind_epoch
            .unwrap_or_else(|| (0.8 * total_epochs as f64).ceil() as usize)
    }

    /// Cost used for layer weights and model-size convergence.
    pub fn goal(&self) -> Goal {
        match self.objective {
            Objective::MemoryConstrained => Goal::Params,
            Objective::FlopsConstrained => Goal::Flops,
            Objective::AccuracyGuaranteed | Objective::Multi => self.minimize_metric,
        }
    }

    fn acc_target(&self) -> Option<f64> {
        match self.objective {
            Objective::AccuracyGuaranteed | Objective::Multi => self.acc_loss_target,
            _ => None,
        }
    }

    fn reduction_targets(&self) -> Vec<(Goal, f64)> {
        let mut out = Vec::new();
        if matches!(self.objective, Objective::MemoryConstrained | Objective::Multi) {
            if let Some(t) = self.param_target {
                out.push((Goal::Params, t));
            }
        }
        if matches!(self.objective, Objective::FlopsConstrained | Objective::Multi) {
            if let Some(t) = self.flops_target {
                out.push((Goal::Flops, t));
            }
        }
        out
    }

    /// Returns `(field, message)` for the first violated constraint.
    pub fn check(&self, total_epochs: usize) -> Result<(), (&'static str, String)> {
        let pct = |v: Option<f64>, field: &'static str| -> Result<(), (&'static str, String)> {
            match v {
                Some(t) if !(0.0..=100.0).contains(&t) => Err((field, "must be a percentage in [0, 100]".into())),
                _ => Ok(()),
            }
        };
        pct(self.param_target, "param_target")?;
        pct(self.flops_target, "flops_target")?;
        if self.acc_loss_target.is_some_and(|t| !t.is_finite()) {
            return Err(("acc_loss_target", "must be finite".into()));
        }
        match self.objective {
            Objective::AccuracyGuaranteed if self.acc_loss_target.is_none() => {
                return Err(("acc_loss_target", "is required for accuracy_guaranteed".into()))
            }
            Objective::MemoryConstrained if self.param_target.is_none() => {
                return Err(("param_target", "is required for memory_constrained".into()))
            }
            Objective::FlopsConstrained if self.flops_target.is_none() => {
                return Err(("flops_target", "is required for flops_constrained".into()))
            }
            Objective::Multi
                if self.acc_loss_target.is_none() && self.param_target.is_none() && self.flops_target.is_none() =>
            {
                return Err(("objective", "multi needs at least one target".into()))
            }
            _ => {}
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            return Err(("t0", "must be >= 0".into()));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(("lambda0", "must be > 0".into()));
        }
        if self.convergence_window == 0 {
            return Err(("convergence_window", "must be >= 1".into()));
        }
        if self.convergence_epsilon.is_nan() || self.convergence_epsilon < 0.0 {
            return Err(("convergence_epsilon", "must be >= 0".into()));
        }
        if self.rollback_retry_limit == 0 {
            return Err(("rollback_retry_limit", "must be >= 1".into()));
        }
        let k = self.rewind_epoch_for(total_epochs);
        if k == 0 || k >= total_epochs {
            return Err(("rewind_epoch", format!("must satisfy 0 < k < {total_epochs}")));
        }
        Ok(())
    }

    pub fn validate(&self, total_epochs: usize) -> Result<()> {
        self.check(total_epochs)
            .map_err(|(field, msg)| Error::invalid(format!("policy.{field} {msg}")))
    }
}

/// How a retrained round relates to the policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOutcome {
    /// Within the constraints and short of the reduction targets: keep pruning.
    #[default]
    Continue,
    /// All reduction targets met without violating the accuracy constraint.
    TargetMet,
    /// The accuracy constraint is violated.
    Violated,
}

/// Classifies a round from its accuracy loss and reductions.
pub fn classify(acc_loss: f64, param_red: f64, flops_red: f64, policy: &PolicyConfig) -> RoundOutcome {
    if let Some(t) = policy.acc_target() {
        if acc_loss.is_nan() || acc_loss >= t {
            return RoundOutcome::Violated;
        }
    }
    let targets = policy.reduction_targets();
    let met = |goal: Goal, t: f64| match goal {
        Goal::Params => param_red >= t,
        Goal::Flops => flops_red >= t,
    };
    if !targets.is_empty() && targets.iter().all(|&(g, t)| met(g, t)) {
        RoundOutcome::TargetMet
    } else {
        RoundOutcome::Continue
    }
}

/// The per-round predicate of each policy.
///
/// Accuracy: `AccLoss < target`. Memory/FLOPs: reduction still `< target`
/// (the keep-pruning branch). Multi: every configured target satisfied
/// (`AccLoss < target`, reductions `>=` their targets).
pub fn policy_accept(record: &RoundRecord, policy: &PolicyConfig) -> bool {
    match policy.objective {
        Objective::AccuracyGuaranteed => policy.acc_loss_target.is_some_and(|t| record.acc_loss < t),
        Objective::MemoryConstrained => policy.param_target.is_some_and(|t| record.param_red < t),
        Objective::FlopsConstrained => policy.flops_target.is_some_and(|t| record.flops_red < t),
        Objective::Multi => {
            policy.acc_loss_target.is_none_or(|t| record.acc_loss < t)
                && policy.param_target.is_none_or(|t| record.param_red >= t)
                && policy.flops_target.is_none_or(|t| record.flops_red >= t)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RollbackAction {
    None,
    Rollback { to_round: usize, prior_rollbacks: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdUpdate {
    pub threshold: f64,
    pub lambda: f64,
    pub action: RollbackAction,
    /// Rounds exhausted as rollback targets during this decision.
    pub newly_marked: Vec<usize>,
}

fn eligible(record: &RoundRecord) -> bool {
    record.outcome == RoundOutcome::Continue && !record.marked_unacceptable
}

/// Next `(T, λ)` after the last round in `history`.
///
/// After an acceptable round: `T += λ`. Otherwise roll back to the most recent
/// eligible round `k` with `C` prior rollbacks, setting
/// `λ = λ[k] / 2^(C+1)` and `T = T[k] + λ`; a round already used
/// `rollback_retry_limit` times is marked unacceptable and the search moves
/// further back. Round 0 is never marked.
pub fn adapt_threshold(history: &[RoundRecord], policy: &PolicyConfig) -> Result<ThresholdUpdate> {
    let last = history
        .last()
        .ok_or_else(|| Error::invalid("adapt_threshold needs a non-empty history"))?;
    if eligible(last) && last.round > 0 {
        return Ok(ThresholdUpdate {
            threshold: last.threshold + last.lambda,
            lambda: last.lambda,
            action: RollbackAction::None,
            newly_marked: Vec::new(),
        });
    }
    let mut newly_marked = Vec::new();
    for k in history.iter().rev().filter(|r| eligible(r) && r.round < last.round.max(1)) {
        if k.round > 0 && k.rollback_count >= policy.rollback_retry_limit {
            newly_marked.push(k.round);
            continue;
        }
        let lambda = k.lambda / 2f64.powi(k.rollback_count as i32 + 1);
        return Ok(ThresholdUpdate {
            threshold: k.threshold + lambda,
            lambda,
            action: RollbackAction::Rollback {
                to_round: k.round,
                prior_rollbacks: k.rollback_count,
            },
            newly_marked,
        });
    }
    Err(Error::invalid("no acceptable round to roll back to"))
}

/// True when each of the last `convergence_window` acceptable rounds changed
/// the model size by less than `convergence_epsilon` percent of the baseline.
pub fn check_convergence(history: &[RoundRecord], policy: &PolicyConfig) -> bool {
    let recent: Vec<&RoundRecord> = history
        .iter()
        .filter(|r| r.round > 0 && r.outcome == RoundOutcome::Continue)
        .rev()
        .take(policy.convergence_window)
        .collect();
    recent.len() == policy.convergence_window
        && recent.iter().all(|r| r.size_change < policy.convergence_epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(round: usize, t: f64, lambda: f64, outcome: RoundOutcome) -> RoundRecord {
        RoundRecord {
            round,
            threshold: t,
            lambda,
            outcome,
            acceptable: outcome == RoundOutcome::Continue,
            ..RoundRecord::default()
        }
    }

    fn policy() -> PolicyConfig {
        PolicyConfig::accuracy_guaranteed(1.0)
    }

    #[test]
    fn accuracy_predicate_is_strict() {
        let p = policy();
        let mut r = rec(1, 0.0, 0.01, RoundOutcome::Continue);
        r.acc_loss = 0.5;
        assert!(policy_accept(&r, &p));
        r.acc_loss = 1.0;
        assert!(!policy_accept(&r, &p));
        assert_eq!(classify(1.0, 0.0, 0.0, &p), RoundOutcome::Violated);
        assert_eq!(classify(0.99, 50.0, 0.0, &p), RoundOutcome::Continue);
    }

    #[test]
    fn multi_needs_every_target() {
        let p = PolicyConfig {
            param_target: Some(80.0),
            flops_target: Some(80.0),
            ..PolicyConfig::new(Objective::Multi)
        };
        let mut r = rec(1, 0.0, 0.01, RoundOutcome::Continue);
        r.param_red = 82.0;
        r.flops_red = 79.0;
        assert!(!policy_accept(&r, &p));
        assert_eq!(classify(0.0, 82.0, 79.0, &p), RoundOutcome::Continue);
        r.flops_red = 80.0;
        assert!(policy_accept(&r, &p));
        assert_eq!(classify(0.0, 82.0, 80.0, &p), RoundOutcome::TargetMet);
    }

    #[test]
    fn memory_predicate_is_the_keep_pruning_branch() {
        let p = PolicyConfig::memory_constrained(90.0);
        let mut r = rec(1, 0.0, 0.01, RoundOutcome::Continue);
        r.param_red = 89.9;
        assert!(policy_accept(&r, &p));
        r.param_red = 90.0;
        assert!(!policy_accept(&r, &p));
        assert_eq!(classify(5.0, 90.0, 0.0, &p), RoundOutcome::TargetMet);
    }

    #[test]
    fn acceptable_round_increments_threshold() {
        let h = vec![rec(0, -0.01, 0.01, RoundOutcome::Continue), rec(8, 0.07, 0.01, RoundOutcome::Continue)];
        let u = adapt_threshold(&h, &policy()).unwrap();
        assert!((u.threshold - 0.08).abs() < 1e-12);
        assert_eq!(u.lambda, 0.01);
        assert_eq!(u.action, RollbackAction::None);
    }

    #[test]
    fn repeated_rollbacks_halve_lambda() {
        let mut h = vec![
            rec(0, -0.01, 0.01, RoundOutcome::Continue),
            rec(1, 0.07, 0.01, RoundOutcome::Continue),
            rec(2, 0.08, 0.01, RoundOutcome::Violated),
        ];
        let u = adapt_threshold(&h, &policy()).unwrap();
        assert!((u.threshold - 0.075).abs() < 1e-12);
        assert_eq!(u.lambda, 0.005);
        assert_eq!(u.action, RollbackAction::Rollback { to_round: 1, prior_rollbacks: 0 });
        h[1].rollback_count = 1;
        h.push(rec(3, 0.075, 0.005, RoundOutcome::Violated));
        let u = adapt_threshold(&h, &policy()).unwrap();
        assert!((u.threshold - 0.0725).abs() < 1e-12);
        assert_eq!(u.lambda, 0.0025);
        assert_eq!(u.action, RollbackAction::Rollback { to_round: 1, prior_rollbacks: 1 });
    }

    #[test]
    fn exhausted_round_is_marked_and_search_continues() {
        let mut h = vec![
            rec(0, -0.01, 0.01, RoundOutcome::Continue),
            rec(1, 0.0, 0.01, RoundOutcome::Continue),
            rec(2, 0.01, 0.01, RoundOutcome::Continue),
            rec(3, 0.02, 0.01, RoundOutcome::Violated),
        ];
        h[2].rollback_count = 3;
        let u = adapt_threshold(&h, &policy()).unwrap();
        assert_eq!(u.newly_marked, vec![2]);
        assert_eq!(u.action, RollbackAction::Rollback { to_round: 1, prior_rollbacks: 0 });
        assert!((u.threshold - 0.005).abs() < 1e-12);
    }

    #[test]
    fn round_zero_is_never_marked() {
        let mut h = vec![rec(0, -0.01, 0.01, RoundOutcome::Continue), rec(1, 0.0, 0.01, RoundOutcome::Violated)];
        h[0].rollback_count = 7;
        let u = adapt_threshold(&h, &policy()).unwrap();
        assert!(u.newly_marked.is_empty());
        assert_eq!(u.action, RollbackAction::Rollback { to_round: 0, prior_rollbacks: 7 });
    }

    #[test]
    fn no_acceptable_round_is_an_error() {
        let h = vec![rec(0, -0.01, 0.01, RoundOutcome::Violated), rec(1, 0.0, 0.01, RoundOutcome::Violated)];
        assert!(adapt_threshold(&h, &policy()).is_err());
    }

    #[test]
    fn convergence_window() {
        let p = policy();
        let mk = |round, change| {
            let mut r = rec(round, 0.0, 0.01, RoundOutcome::Continue);
            r.size_change = change;
            r
        };
        assert!(!check_convergence(&[mk(0, 0.0), mk(1, 0.0), mk(2, 0.0)], &p));
        assert!(check_convergence(&[mk(0, 0.0), mk(1, 0.0), mk(2, 0.0), mk(3, 0.0)], &p));
        assert!(!check_convergence(&[mk(1, 0.05), mk(2, 0.2), mk(3, 0.03)], &p));
    }

    #[test]
    fn validation_names_fields() {
        let mut p = policy();
        p.lambda0 = -0.1;
        assert_eq!(p.check(100).unwrap_err().0, "lambda0");
        let mut p = policy();
        p.rewind_epoch = Some(100);
        assert_eq!(p.check(100).unwrap_err().0, "rewind_epoch");
        assert_eq!(policy().rewind_epoch_for(30), 24);
        assert_eq!(PolicyConfig::new(Objective::MemoryConstrained).check(10).unwrap_err().0, "param_target");
    }
}
