use std::fs;
use std::path::Path;

use frpt::data::{instance_normalize, load_mnist, LabeledDataset};
use frpt::nn::Preset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SYNTH_TRAIN: &str = "train.frsy";
pub const SYNTH_TEST: &str = "test.frsy";

fn yes() -> bool {
    true
}

/// Which slice of a data directory a run sees. Stored in checkpoint metadata
/// so later commands select the same instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Keep `n` training instances: the first `n`, or a uniform sample when
    /// `subset_seed` is set.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
    #[serde(default)]
    pub subset_seed: Option<u64>,
    #[serde(default = "yes")]
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_limit: None,
            test_limit: None,
            subset_seed: None,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainFile {
    pub preset: Preset,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub data: DataConfig,
}

fn default_batch() -> usize {
    frpt::posttrain::DEFAULT_BATCH
}

fn default_lr() -> f64 {
    frpt::nn::AdamConfig::default().lr
}

/// Metadata block stored inside every checkpoint the CLI writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub preset: Option<Preset>,
    pub data: DataConfig,
    /// Training epochs completed when the snapshot was taken.
    pub epoch: usize,
    pub test_accuracy: Option<f64>,
}

impl CheckpointMeta {
    pub fn from_value(v: serde_json::Value) -> Self {
        serde_json::from_value(v).unwrap_or(CheckpointMeta {
            preset: None,
            data: DataConfig::default(),
            epoch: 0,
            test_accuracy: None,
        })
    }
}

/// Reads and parses a JSON config; every failure maps to the config exit code.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<(T, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CliError::config_file(path, e))?;
    let value = serde_json::from_slice(&bytes).map_err(|e| CliError::config_file(path, e))?;
    Ok((value, bytes))
}

/// Train and test splits from `dir`: `train.frsy`/`test.frsy` if present,
/// otherwise the four MNIST IDX files.
pub fn load_data(dir: &Path, cfg: &DataConfig) -> CliResult<(LabeledDataset, LabeledDataset)> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", dir.display())));
    }
    let (mut train, mut test) = if dir.join(SYNTH_TRAIN).exists() {
        (
            LabeledDataset::load(&dir.join(SYNTH_TRAIN))?,
            LabeledDataset::load(&dir.join(SYNTH_TEST))?,
        )
    } else {
        load_mnist(dir)?
    };
    let take = |ds: LabeledDataset, n: Option<usize>, salt: u64| match (n, cfg.subset_seed) {
        (None, _) => Ok(ds),
        (Some(n), None) => ds.head(n),
        (Some(n), Some(seed)) => ds.sample(n, seed ^ salt),
    };
    train = take(train, cfg.train_limit, 0)?;
    // distinct stream so train and test draws are not index-aligned
    test = take(test, cfg.test_limit, 0x7e57)?;
    if cfg.normalize {
        train = instance_normalize(&train);
        test = instance_normalize(&test);
    }
    Ok((train, test))
}
