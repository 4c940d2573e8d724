//! Run configuration: one JSON document, validated with field-path diagnostics.

use std::path::{Path, PathBuf};

use aap_core::attention::AttentionConfig;
use aap_core::controller::PolicyConfig;
use aap_core::data::{load_mnist_dir, synthetic_blobs, AugmentPolicy, Dataset, Split, DATA_DIR_ENV};
use aap_core::graph::Preset;
use aap_core::nn::TrainConfig;
use aap_core::oracle::OracleSpec;
use aap_core::tensor::Dtype;
use aap_core::Architecture;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// A configuration problem, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Preset(Preset),
    /// JSON file holding an [`Architecture`].
    SpecFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX files under `root`, overridden by the data directory variable.
    Mnist {
        root: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Synthetic {
        train_size: usize,
        test_size: usize,
        #[serde(default = "ten")]
        classes: usize,
        #[serde(default)]
        augment: Option<AugmentPolicy>,
    },
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    #[default]
    Substrate,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Rewind epochs for the stability sweep (real trainer only).
    #[serde(default)]
    pub stability_rewind_epochs: Vec<usize>,
}

fn default_dtype() -> Dtype {
    Dtype::F32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Seeds model initialization and synthetic data.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
    pub model: ModelSource,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub trainer: TrainerKind,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub attention: AttentionConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// Parses a config document, reporting the failing field path.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        err(path, e.into_inner().to_string())
    })
}

fn nested(prefix: &str, check: Result<(), (&'static str, String)>) -> Result<(), ConfigError> {
    check.map_err(|(field, message)| err(format!("{prefix}.{field}"), message))
}

impl RunConfig {
    /// Semantic checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(err("version", format!("unsupported version, expected {CONFIG_VERSION}")));
        }
        nested("train", self.train.check())?;
        nested("policy", self.policy.check(self.train.total_epochs))?;
        nested("attention", self.attention.check())?;
        match (&self.trainer, &self.oracle) {
            (TrainerKind::Oracle, None) => return Err(err("oracle", "is required when trainer is oracle")),
            (TrainerKind::Oracle, Some(spec)) => nested("oracle", spec.check())?,
            _ => {}
        }
        if let DatasetConfig::Synthetic {
            train_size,
            test_size,
            classes,
            ..
        } = self.dataset
        {
            if train_size == 0 {
                return Err(err("dataset.train_size", "must be >= 1"));
            }
            if test_size == 0 {
                return Err(err("dataset.test_size", "must be >= 1"));
            }
            if classes < 2 {
                return Err(err("dataset.classes", "must be >= 2"));
            }
        }
        let total = self.train.total_epochs;
        if let Some(&k) = self.analysis.stability_rewind_epochs.iter().find(|&&k| k >= total) {
            return Err(err("analysis.stability_rewind_epochs", format!("epoch {k} must be < {total}")));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture, ConfigError> {
        match &self.model {
            ModelSource::Preset(p) => Ok(Architecture {
                input_shape: p.input_shape(),
                layers: p.specs(),
            }),
            ModelSource::SpecFile(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| err("model.spec_file", format!("{}: {e}", path.display())))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de)
                    .map_err(|e| err(format!("model.spec_file:{}", e.path()), e.into_inner().to_string()))
            }
        }
    }

    /// Loads the train and test splits and checks them against `arch`.
    pub fn load_data(&self, arch: &Architecture) -> Result<(Dataset, Dataset), ConfigError> {
        let (train, test) = match &self.dataset {
            DatasetConfig::Mnist {
                root,
                train_limit,
                test_limit,
            } => {
                let root = data_root(root);
                let load = |split| {
                    load_mnist_dir(&root, split).map_err(|e| err("dataset.root", format!("{}: {e}", root.display())))
                };
                let (mut train, mut test) = (load(Split::Train)?, load(Split::Test)?);
                if let Some(n) = train_limit {
                    train = train.take(*n);
                }
                if let Some(n) = test_limit {
                    test = test.take(*n);
                }
                (train, test)
            }
            DatasetConfig::Synthetic {
                train_size,
                test_size,
                classes,
                augment,
            } => {
                let make = |n, split| {
                    synthetic_blobs(n, *classes, arch.input_shape, self.seed, split).map_err(|e| err("dataset", e.to_string()))
                };
                let (mut train, test) = (make(*train_size, Split::Train)?, make(*test_size, Split::Test)?);
                if let Some(policy) = augment {
                    train.default_augment = *policy;
                }
                (train, test)
            }
        };
        if train.shape() != arch.input_shape {
            return Err(err(
                "dataset",
                format!("images are {:?} but the model expects {:?}", train.shape(), arch.input_shape),
            ));
        }
        let probe: aap_core::ModelGraph<f32> = arch.build(0).map_err(|e| err("model", e.to_string()))?;
        if probe.num_classes() != train.num_classes() {
            return Err(err(
                "dataset",
                format!("{} classes but the model predicts {}", train.num_classes(), probe.num_classes()),
            ));
        }
        if self.attention.criterion == aap_core::attention::Criterion::Attention && self.attention.batch_size > train.len() {
            return Err(err(
                "attention.batch_size",
                format!("exceeds the {} training examples", train.len()),
            ));
        }
        Ok((train, test))
    }
}

/// The data directory variable, when set, replaces the configured root.
pub fn data_root(configured: &Path) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| configured.to_path_buf(), PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ORACLE: &str = r#"{
        "version": 1,
        "seed": 7,
        "model": {"preset": "smallconv"},
        "dataset": {"kind": "synthetic", "train_size": 64, "test_size": 32},
        "trainer": "oracle",
        "oracle": {"curve": {"type": "step", "plateau": 99.0, "knee": 50.0, "drop": 20.0}},
        "train": {"initial_lr": 0.05, "total_epochs": 10, "batch_size": 16},
        "policy": {"objective": "accuracy_guaranteed", "acc_loss_target": 1.0, "lambda0": 0.05},
        "attention": {"batch_size": 32},
        "output_dir": "runs/oracle"
    }"#;

    #[test]
    fn parses_and_validates() {
        let cfg = parse_config(ORACLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.policy.convergence_window, 3);
        let arch = cfg.architecture().unwrap();
        let (train, test) = cfg.load_data(&arch).unwrap();
        assert_eq!((train.len(), test.len()), (64, 32));
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let cfg = parse_config(&ORACLE.replace("\"lambda0\": 0.05", "\"lambda0\": -0.01")).unwrap();
        assert_eq!(cfg.validate().unwrap_err().path, "policy.lambda0");
    }

    #[test]
    fn type_errors_carry_the_path() {
        let e = parse_config(&ORACLE.replace("\"batch_size\": 16", "\"batch_size\": \"x\"")).unwrap_err();
        assert_eq!(e.path, "train.batch_size");
        let e = parse_config(&ORACLE.replace("\"seed\": 7", "\"seed\": 7, \"bogus\": 1")).unwrap_err();
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn oracle_trainer_needs_a_spec() {
        let mut cfg = parse_config(ORACLE).unwrap();
        cfg.oracle = None;
        assert_eq!(cfg.validate().unwrap_err().path, "oracle");
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let cfg = parse_config(&ORACLE.replace("\"test_size\": 32}", "\"test_size\": 32, \"classes\": 5}")).unwrap();
        let arch = cfg.architecture().unwrap();
        assert!(cfg.load_data(&arch).is_err());
    }
}
