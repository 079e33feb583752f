use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, synth_classification, synth_regression, Dataset, SplitSpec, Splits};
use crate::error::{Error, Result};
use crate::harness::records::ClockMode;
use crate::lossnet::LossNetMode;
use crate::metaloop::{MetaConfig, TrainMode};
use crate::models::{Arch, TaskLoss};

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// The four standard MNIST IDX files inside `dir`.
    Mnist {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    SyntheticClassification {
        n_train: usize,
        n_test: usize,
        features: usize,
        classes: usize,
        separation: f64,
        seed: u64,
    },
    SyntheticRegression {
        n_train: usize,
        n_test: usize,
        features: usize,
        noise: f64,
        seed: u64,
    },
}

impl DatasetSpec {
    /// Loads the training pool and the held-out test set.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DatasetSpec::Mnist {
                dir,
                train_limit,
                test_limit,
            } => {
                let train = load_idx(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS))?;
                let test = load_idx(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS))?;
                let train = match train_limit {
                    Some(n) => train.head(*n),
                    None => train,
                };
                let test = match test_limit {
                    Some(n) => test.head(*n),
                    None => test,
                };
                Ok((train, Some(test)))
            }
            &DatasetSpec::SyntheticClassification {
                n_train,
                n_test,
                features,
                classes,
                separation,
                seed,
            } => {
                let all = synth_classification(n_train + n_test, features, classes, separation, seed)?;
                Ok(head_tail(&all, n_train))
            }
            &DatasetSpec::SyntheticRegression {
                n_train,
                n_test,
                features,
                noise,
                seed,
            } => {
                let all = synth_regression(n_train + n_test, features, noise, seed)?;
                Ok(head_tail(&all, n_train))
            }
        }
    }
}

fn head_tail(all: &Dataset, n_train: usize) -> (Dataset, Option<Dataset>) {
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..all.len()).collect();
    let test = (!test.is_empty()).then(|| all.subset(&test));
    (all.subset(&train), test)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossNetConfig {
    pub width: usize,
    pub mode: LossNetMode,
}

impl Default for LossNetConfig {
    fn default() -> Self {
        LossNetConfig {
            width: 40,
            mode: LossNetMode::Adalfl,
        }
    }
}

fn default_modes() -> Vec<TrainMode> {
    vec![TrainMode::BaselineCe, TrainMode::OnlineAdalfl]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_batch_size() -> usize {
    128
}

fn default_interval() -> usize {
    500
}

fn default_valid_fraction() -> f64 {
    0.1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A full experiment: one dataset and architecture, every (mode, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub arch: Arch,
    #[serde(default = "default_modes")]
    pub modes: Vec<TrainMode>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_interval")]
    pub log_interval: usize,
    #[serde(default = "default_interval")]
    pub snapshot_interval: usize,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    /// Seed of the train/validation permutation, shared by all cells.
    #[serde(default)]
    pub split_seed: u64,
    /// Cap on training rows used for train-split metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_eval_limit: Option<usize>,
    #[serde(default)]
    pub clock: ClockMode,
    /// Keep the base parameters at every logged step in memory.
    #[serde(default)]
    pub record_theta: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub loss_net: LossNetConfig,
    #[serde(default)]
    pub meta: MetaConfig,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, arch: Arch) -> Self {
        ExperimentConfig {
            dataset,
            arch,
            modes: default_modes(),
            seeds: default_seeds(),
            batch_size: default_batch_size(),
            log_interval: default_interval(),
            snapshot_interval: default_interval(),
            valid_fraction: default_valid_fraction(),
            split_seed: 0,
            train_eval_limit: None,
            clock: ClockMode::Wall,
            record_theta: false,
            out_dir: default_out_dir(),
            loss_net: LossNetConfig::default(),
            meta: MetaConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("at least one mode and one seed are required".into()));
        }
        if self.batch_size == 0 || self.log_interval == 0 || self.snapshot_interval == 0 {
            return Err(Error::Config("batch size and intervals must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("valid_fraction must lie in [0, 1)".into()));
        }
        if self.loss_net.width == 0 {
            return Err(Error::Config("loss network width must be at least 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.modes.iter().all(|m| seen.insert(*m)) {
            return Err(Error::Config("modes must be distinct".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.seeds.iter().all(|s| seen.insert(*s)) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        let regression = matches!(self.dataset, DatasetSpec::SyntheticRegression { .. });
        if regression != (self.meta.task == TaskLoss::SquaredError) {
            return Err(Error::Config(
                "regression data needs the squared_error task and classification data cross_entropy".into(),
            ));
        }
        self.arch.validate()?;
        self.meta.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text)
    }

    /// Loads the dataset and applies the train/validation split.
    pub fn load_splits(&self) -> Result<Splits> {
        let (train_full, test) = self.dataset.load()?;
        if train_full.n_features() != self.arch.in_dim() || train_full.n_outputs() != self.arch.n_outputs() {
            return Err(Error::Config(format!(
                "dataset has {} features / {} outputs but the model expects {} / {}",
                train_full.n_features(),
                train_full.n_outputs(),
                self.arch.in_dim(),
                self.arch.n_outputs()
            )));
        }
        let spec = SplitSpec {
            valid_fraction: self.valid_fraction,
            seed: self.split_seed,
        };
        Splits::from_spec(&train_full, test, &spec)
    }
}
