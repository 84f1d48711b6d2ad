//! Pretraining, reconstruction-augmented post-training (FR) and its plain
//! backpropagation counterpart (BP) over a trainable unit range.

mod heatmap;
mod recon_dataset;
mod report;

pub use heatmap::{deviation_heatmap, instance_heatmap, mean_deviation, ChannelMap, Heatmap};
pub use recon_dataset::{build_recon_dataset, ReconDataset, ReconHeader, UnitDiagnostic};
pub use report::{AggregateRow, SweepReport, SweepRow};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::embedding::EmbeddingMethod;
use crate::error::{Error, Result};
use crate::nn::{evaluate, train_step, AdamConfig, AdamState, LossKind, Network, StepConfig, StepLosses, TrainableRange};

pub const DEFAULT_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Classification plus reconstruction loss against precomputed targets.
    #[serde(rename = "FR")]
    Reconstruction,
    /// Classification loss only.
    #[serde(rename = "BP")]
    Backprop,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Reconstruction => "FR",
            Mode::Backprop => "BP",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FR" | "fr" => Ok(Mode::Reconstruction),
            "BP" | "bp" => Ok(Mode::Backprop),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?} (expected FR or BP)"))),
        }
    }
}

fn default_batch() -> usize {
    DEFAULT_BATCH
}

fn default_lr() -> f64 {
    AdamConfig::default().lr
}

fn default_eval_epochs() -> Vec<usize> {
    vec![1, 5, 10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostTrainConfig {
    pub mode: Mode,
    /// `l_S`: units `1..=l_S` stay frozen.
    pub start: usize,
    /// `l_R`: units above it stay frozen; reconstruction targets live here.
    pub end: usize,
    /// Reconstruction weight; ignored (treated as 0) in BP mode.
    #[serde(default)]
    pub alpha: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seeds: Vec<u64>,
    /// Required in FR mode.
    #[serde(default)]
    pub embedding: Option<EmbeddingMethod>,
    /// Epochs after which test accuracy is recorded and a snapshot kept.
    #[serde(default = "default_eval_epochs")]
    pub eval_epochs: Vec<usize>,
}

impl PostTrainConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        TrainableRange::new(self.start, self.end).check(depth)?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be positive".into()));
        }
        if !self.eval_epochs.iter().any(|e| (1..=self.epochs).contains(e)) {
            return Err(Error::InvalidConfig(format!(
                "no evaluation epoch in {:?} falls within 1..={}",
                self.eval_epochs, self.epochs
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if self.mode == Mode::Reconstruction {
            if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                return Err(Error::InvalidConfig(format!("FR mode needs alpha in (0, 1], got {}", self.alpha)));
            }
            if self.embedding.is_none() {
                return Err(Error::InvalidConfig("FR mode needs an embedding method".into()));
            }
        }
        Ok(())
    }

    pub fn step_config(&self) -> StepConfig {
        let (alpha, rec_loss) = match self.mode {
            Mode::Backprop => (0.0, LossKind::Mse),
            Mode::Reconstruction => (self.alpha, self.embedding.map_or(LossKind::Mse, EmbeddingMethod::rec_loss)),
        };
        StepConfig {
            alpha,
            range: TrainableRange::new(self.start, self.end),
            rec_loss,
        }
    }
}

/// One shuffled pass over `train` in batches of `batch_size`; returns the
/// mean batch losses.
pub fn run_epoch(
    net: &mut Network,
    adam: &mut AdamState,
    train: &LabeledDataset,
    recon: Option<&ReconDataset>,
    cfg: &StepConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut total = StepLosses::default();
    let mut batches = 0;
    for idx in order.chunks(batch_size) {
        let (x, y) = train.gather(idx);
        let targets = recon.map(|r| r.gather(idx));
        let l = train_step(net, adam, &x, &y, targets.as_ref(), cfg)?;
        total.cls += l.cls;
        total.rec += l.rec;
        total.total += l.total;
        batches += 1;
    }
    let inv = 1.0 / batches as f64;
    Ok(StepLosses {
        cls: total.cls * inv,
        rec: total.rec * inv,
        total: total.total * inv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub seed: u64,
}

/// End-to-end cross-entropy training. `on_epoch(epoch, net, test accuracy)`
/// runs after every epoch.
pub fn pretrain(
    net: &mut Network,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, &Network, f64) -> Result<()>,
) -> Result<f64> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("epochs and batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let step = StepConfig::end_to_end(net);
    let mut acc = 0.0;
    for epoch in 1..=cfg.epochs {
        run_epoch(net, &mut adam, train, None, &step, cfg.batch_size, &mut rng)?;
        acc = evaluate(net, test.images(), test.labels())?;
        on_epoch(epoch, net, acc)?;
    }
    Ok(acc)
}

/// Outcome of one post-training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    /// `(epoch, test accuracy)` at each evaluation epoch.
    pub accuracies: Vec<(usize, f64)>,
    /// Network snapshots at the same epochs.
    pub snapshots: Vec<(usize, Network)>,
}

/// Post-trains a copy of `net` for one seed. FR mode requires `recon` built
/// at `cfg.end` over exactly the instances of `train`.
pub fn run_posttrain(
    net: &Network,
    cfg: &PostTrainConfig,
    seed: u64,
    train: &LabeledDataset,
    test: &LabeledDataset,
    recon: Option<&ReconDataset>,
) -> Result<RunResult> {
    cfg.validate(net.depth())?;
    let recon = match cfg.mode {
        Mode::Backprop => None,
        Mode::Reconstruction => {
            let r = recon.ok_or(Error::MissingReconTargets)?;
            if r.header.unit != cfg.end {
                return Err(Error::ConfigMismatch(format!(
                    "reconstruction targets are at l_R = {}, config asks for {}",
                    r.header.unit, cfg.end
                )));
            }
            if r.len() != train.len() {
                return Err(Error::ConfigMismatch(format!(
                    "{} reconstruction targets for {} training instances",
                    r.len(),
                    train.len()
                )));
            }
            if Some(r.header.method) != cfg.embedding {
                return Err(Error::ConfigMismatch(format!(
                    "targets use embedding {}, config asks for {}",
                    r.header.method,
                    cfg.embedding.map_or("none", EmbeddingMethod::name)
                )));
            }
            Some(r)
        }
    };
    let step = cfg.step_config();
    let mut model = net.clone();
    let mut adam = AdamState::new(&model, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = RunResult {
        seed,
        accuracies: Vec::new(),
        snapshots: Vec::new(),
    };
    for epoch in 1..=cfg.epochs {
        run_epoch(&mut model, &mut adam, train, recon, &step, cfg.batch_size, &mut rng)?;
        if cfg.eval_epochs.contains(&epoch) {
            result.accuracies.push((epoch, evaluate(&model, test.images(), test.labels())?));
            result.snapshots.push((epoch, model.clone()));
        }
    }
    Ok(result)
}

/// Runs every seed of `cfg` and collects the per-epoch rows.
pub fn run_sweep(
    net: &Network,
    cfg: &PostTrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    recon: Option<&ReconDataset>,
) -> Result<SweepReport> {
    let mut report = SweepReport::default();
    for &seed in &cfg.seeds {
        let run = run_posttrain(net, cfg, seed, train, test, recon)?;
        report.extend_run(cfg, net.param_count(cfg.start, cfg.end), &run);
    }
    Ok(report)
}
