//! `frpt` command-line experiments: pretraining, reconstruction datasets,
//! post-training sweeps, evaluation and deviation heatmaps.

mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use frpt::embedding::EmbeddingMethod;

pub use commands::run;
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "frpt", version, about = "Feature-reconstruction post-training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a preset network end to end with cross-entropy.
    Pretrain(PretrainArgs),
    /// Build a reconstruction-target dataset from a checkpoint.
    Recon(ReconArgs),
    /// Post-train one configuration over its seeds.
    Posttrain(PosttrainArgs),
    /// Print test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Write per-channel deviation heatmaps between forward and target maps.
    Heatmap(HeatmapArgs),
    /// Sweep every (l_S, l_R) pair for BP and FR, or the embedding ablation.
    Compare(CompareArgs),
    /// Write a synthetic train/test pair usable as a data directory.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// JSON: preset, epochs, seed, optional batch_size, lr, data.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also save `<out stem>_epoch<e>.<ext>` every this many epochs.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Unit whose output receives the targets (`l_R`).
    #[arg(long = "lr")]
    pub unit: usize,
    #[arg(long, default_value = "ne")]
    pub embed: EmbeddingMethod,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PosttrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON post-training config.
    #[arg(long)]
    pub config: PathBuf,
    /// Reconstruction dataset; required in FR mode.
    #[arg(long)]
    pub recon: Option<PathBuf>,
    /// Raw CSV; the aggregate goes to `<stem>_agg.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for `seed<s>_epoch<e>.frpt` snapshots.
    #[arg(long)]
    pub save_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Unit whose output map is compared.
    #[arg(long)]
    pub layer: usize,
    #[arg(long, default_value = "ne")]
    pub embed: EmbeddingMethod,
    /// Instance rendered to PGM/CSV.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Instances averaged into the summary mean.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON: alpha, epochs, seeds, optional eval_epochs, batch_size, lr.
    #[arg(long)]
    pub config: PathBuf,
    /// Embeddings for FR runs, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "ne")]
    pub embed: Vec<EmbeddingMethod>,
    /// Only (L−1, L): the last unit is trained.
    #[arg(long)]
    pub last_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    /// Image side length.
    #[arg(long, default_value_t = 28)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Caps the rayon pool at `FRPT_THREADS` workers when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("FRPT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("FRPT_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}
