use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tinyppg::loss::ContrastStrategy;
use tinyppg::runtime::DEFAULT_BUDGET_BYTES;

#[derive(Debug, Parser)]
#[command(name = "tinyppg", version, about = "Train, prune and run the Tiny-PPG artifact segmentation network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic TPPG dataset.
    Synth(SynthArgs),
    /// Filter, segment and normalize raw per-subject dumps into a TPPG dataset.
    Preprocess(PreprocessArgs),
    /// Train a fresh model.
    Train(TrainCmd),
    /// Mask the lowest-scale channels of a trained model.
    Prune(PruneArgs),
    /// Retrain a pruned model.
    Finetune(FinetuneCmd),
    /// Pooled confusion counts and DICE on a dataset.
    Eval(EvalArgs),
    /// Segment a sample stream window by window inside the planned arena.
    Infer(InferArgs),
    /// Write projection embeddings of sampled points as CSV.
    ExportEmbeddings(ExportArgs),
    /// Report the activation memory plan of a model.
    PlanMemory(PlanArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub segments: usize,
    #[arg(long, default_value_t = 20)]
    pub subjects: usize,
    #[arg(long, default_value_t = 0.3)]
    pub artifact_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// `SUBJECT_ID:PATH` of a raw dump (`u32 count | f32 samples | u8 labels`); repeatable.
    #[arg(long = "raw", required = true, value_parser = parse_raw_source)]
    pub raw: Vec<(u16, PathBuf)>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub low_hz: f64,
    #[arg(long, default_value_t = 5.0)]
    pub high_hz: f64,
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Single forward pass instead of zero-phase filtering.
    #[arg(long)]
    pub causal: bool,
}

fn parse_raw_source(s: &str) -> Result<(u16, PathBuf), String> {
    let (id, path) = s.split_once(':').ok_or_else(|| format!("expected SUBJECT_ID:PATH, got `{s}`"))?;
    let id = id.parse::<u16>().map_err(|e| format!("bad subject id `{id}`: {e}"))?;
    if path.is_empty() {
        return Err("empty path".into());
    }
    Ok((id, PathBuf::from(path)))
}

/// Optimizer and loss settings shared by `train` and `finetune`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset. Without it, `--val-fraction` of `--data` is held out.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    /// Learning rate halves every this many epochs.
    #[arg(long, default_value_t = 100)]
    pub lr_halving: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = ContrastStrategy::Both)]
    pub contrastive: ContrastStrategy,
    /// Per-class memory-bank length; 0 disables the bank.
    #[arg(long, default_value_t = 0)]
    pub bank_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l1_gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Save a snapshot every N epochs (0 = never) into `--checkpoint-dir`.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct FinetuneCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Physically drop masked channels from the result.
    #[arg(long)]
    pub compact: bool,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ratio: f64,
    /// Physically drop masked channels instead of keeping a mask.
    #[arg(long)]
    pub compact: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Full report with per-segment scores.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw little-endian float32 samples or a TPPG dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1920)]
    pub window: usize,
    /// Defaults to the window length.
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Fail if the planned arena exceeds this many bytes.
    #[arg(long)]
    pub budget_bytes: Option<usize>,
    /// Mask output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub max_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES)]
    pub budget_bytes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
