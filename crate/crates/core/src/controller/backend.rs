//! Training backends driven by the controller.

use crate::accounting::{reductions, CostTable};
use crate::attention::{evaluate_model_attentions, AttentionConfig, AttentionReport};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::Result;
use crate::graph::ModelGraph;
use crate::nn::{evaluate_accuracy, train_run, SgdState, TrainConfig};
use crate::oracle::{oracle_evaluate, OracleSpec};
use crate::tensor::Scalar;

/// State after pretraining: the rewind snapshot `W_k` and the baseline accuracy.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub rewind: Checkpoint,
    pub accuracy: f64,
}

pub trait PruningBackend<S: Scalar> {
    /// Trains from scratch to the end of the schedule, snapshotting the
    /// weights (without momentum) after `rewind_epoch` epochs.
    fn pretrain(&mut self, model: &mut ModelGraph<S>, opt: &mut SgdState<S>, rewind_epoch: usize) -> Result<Pretrained>;

    /// Scores the active filters of every prunable layer.
    fn attention(&mut self, model: &ModelGraph<S>, round: usize) -> Result<AttentionReport>;

    /// Retrains epochs `from_epoch..E` and returns the test accuracy.
    fn retrain(&mut self, model: &mut ModelGraph<S>, opt: &mut SgdState<S>, from_epoch: usize) -> Result<f64>;

    /// Test accuracy of `model` as it stands.
    fn evaluate(&mut self, model: &ModelGraph<S>) -> Result<f64>;

    /// Epochs in the training schedule.
    fn total_epochs(&self) -> usize;
}

/// Real training on the numeric substrate.
#[derive(Debug, Clone)]
pub struct SubstrateBackend {
    pub train: Dataset,
    pub test: Dataset,
    pub train_config: TrainConfig,
    pub attention: AttentionConfig,
    /// Extra epochs whose weights are kept during pretraining.
    pub snapshot_epochs: Vec<usize>,
    /// Filled by [`PruningBackend::pretrain`], one per entry of `snapshot_epochs`.
    pub snapshots: Vec<(usize, Checkpoint)>,
}

impl SubstrateBackend {
    pub fn new(train: Dataset, test: Dataset, train_config: TrainConfig, attention: AttentionConfig) -> Self {
        Self {
            train,
            test,
            train_config,
            attention,
            snapshot_epochs: Vec::new(),
            snapshots: Vec::new(),
        }
    }
}

impl<S: Scalar> PruningBackend<S> for SubstrateBackend {
    fn pretrain(&mut self, model: &mut ModelGraph<S>, opt: &mut SgdState<S>, rewind_epoch: usize) -> Result<Pretrained> {
        let mut rewind = None;
        let mut snapshots = Vec::new();
        let wanted = self.snapshot_epochs.clone();
        let mut hook = |epoch: usize, m: &ModelGraph<S>, _: &SgdState<S>| -> Result<()> {
            if epoch == rewind_epoch {
                rewind = Some(Checkpoint::capture(m, None, epoch, 0, serde_json::Value::Null));
            }
            if wanted.contains(&epoch) {
                snapshots.push((epoch, Checkpoint::capture(m, None, epoch, 0, serde_json::Value::Null)));
            }
            Ok(())
        };
        let total = self.train_config.total_epochs;
        let summary = train_run(model, opt, &self.train, Some(&self.test), &self.train_config, 0..total, &mut hook)?;
        self.snapshots = snapshots;
        Ok(Pretrained {
            rewind: rewind.unwrap_or_else(|| Checkpoint::capture(model, None, rewind_epoch, 0, serde_json::Value::Null)),
            accuracy: summary.test_accuracy.expect("test split given"),
        })
    }

    fn attention(&mut self, model: &ModelGraph<S>, round: usize) -> Result<AttentionReport> {
        evaluate_model_attentions(model, &self.train, &self.attention, round)
    }

    fn retrain(&mut self, model: &mut ModelGraph<S>, opt: &mut SgdState<S>, from_epoch: usize) -> Result<f64> {
        let total = self.train_config.total_epochs;
        train_run(model, opt, &self.train, None, &self.train_config, from_epoch..total, &mut |_, _, _| Ok(()))?;
        evaluate_accuracy(model, &self.test)
    }

    fn evaluate(&mut self, model: &ModelGraph<S>) -> Result<f64> {
        evaluate_accuracy(model, &self.test)
    }

    fn total_epochs(&self) -> usize {
        self.train_config.total_epochs
    }
}

/// Replaces training with a closed-form accuracy-versus-reduction curve.
/// Attention is still computed from the model on `attention_data`.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    pub spec: OracleSpec,
    pub attention_data: Dataset,
    pub attention: AttentionConfig,
    pub total_epochs: usize,
    baseline: Option<CostTable>,
}

impl OracleBackend {
    pub fn new(spec: OracleSpec, attention_data: Dataset, attention: AttentionConfig, total_epochs: usize) -> Self {
        Self {
            spec,
            attention_data,
            attention,
            total_epochs,
            baseline: None,
        }
    }
}

impl<S: Scalar> PruningBackend<S> for OracleBackend {
    fn pretrain(&mut self, model: &mut ModelGraph<S>, _opt: &mut SgdState<S>, rewind_epoch: usize) -> Result<Pretrained> {
        self.baseline = Some(CostTable::of(model));
        Ok(Pretrained {
            rewind: Checkpoint::capture(model, None, rewind_epoch, 0, serde_json::Value::Null),
            accuracy: oracle_evaluate(&self.spec, 0.0),
        })
    }

    fn attention(&mut self, model: &ModelGraph<S>, round: usize) -> Result<AttentionReport> {
        evaluate_model_attentions(model, &self.attention_data, &self.attention, round)
    }

    fn retrain(&mut self, model: &mut ModelGraph<S>, _opt: &mut SgdState<S>, _from_epoch: usize) -> Result<f64> {
        PruningBackend::<S>::evaluate(self, model)
    }

    fn evaluate(&mut self, model: &ModelGraph<S>) -> Result<f64> {
        let now = CostTable::of(model);
        let baseline = self.baseline.get_or_insert_with(|| now.clone());
        Ok(oracle_evaluate(&self.spec, reductions(&now, baseline).params_pct))
    }

    fn total_epochs(&self) -> usize {
        self.total_epochs
    }
}
