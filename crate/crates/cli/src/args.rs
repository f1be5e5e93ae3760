use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "thermo", version, about = "Thermal-video fall detection: flow extraction, training, evaluation, streaming")]
pub struct Cli {
    /// Log level (error, warn, info, debug, trace); RUST_LOG overrides.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Precompute the motion channel for every consecutive frame pair.
    Flow(FlowArgs),
    /// Write a synthetic thermal fall dataset (frames + manifest.csv).
    Synth(SynthArgs),
    /// Train a model variant and write weights, history and resolved config.
    Train(TrainArgs),
    /// Score a split with trained weights and print ROC-AUC, accuracy, F1, MCC.
    Eval(EvalArgs),
    /// Report analytic GFLOPs and measured per-sample inference time.
    Bench(BenchArgs),
    /// Run streaming inference over a frame directory or stdin.
    Stream(StreamArgs),
}

/// Where the model and settings come from.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// key=value configuration file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// baseline, m1, m2, m3 or m4.
    #[arg(long)]
    pub variant: Option<String>,
    /// paper or desk.
    #[arg(long)]
    pub scale: Option<String>,
}

#[derive(Args, Debug)]
pub struct FlowArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cache root; files land in <out>/<video_id>/pair_NNNNN.flow.
    #[arg(long)]
    pub out: PathBuf,
    /// low, low-medium, balanced, medium-high or high.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub n_fall: usize,
    #[arg(long, default_value_t = 250)]
    pub n_nonfall: usize,
    #[arg(long, default_value_t = 32)]
    pub extent: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Falls back to THERMO_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Train on the built-in synthetic generator.
    #[arg(long)]
    pub synthetic: bool,
    /// Flow cache written by `thermo flow` (needed by m1 on a manifest).
    #[arg(long)]
    pub flow_cache: Option<PathBuf>,
    /// Request the motion channel; only m1 consumes it.
    #[arg(long)]
    pub motion_flow: bool,
    /// Restrict training to videos carrying this tag.
    #[arg(long)]
    pub subset: Option<String>,
    /// Falls back to the config file, then THERMO_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Weights file; settings are read from config.resolved beside it.
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub flow_cache: Option<PathBuf>,
    #[arg(long)]
    pub subset: Option<String>,
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Optional weights; without them a freshly initialised model is timed.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Report analytic GFLOPs per sample.
    #[arg(long)]
    pub flops: bool,
    /// Measure per-sample inference time.
    #[arg(long)]
    pub psit: bool,
    #[arg(long, default_value_t = 250.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 4.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Frame directory, or `-` for length-prefixed frames on stdin.
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Replay a directory as fast as possible instead of at --fps.
    #[arg(long)]
    pub no_pace: bool,
    /// Compute the motion channel inline (m1).
    #[arg(long)]
    pub flow: bool,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub cooldown: Option<usize>,
    /// Directory for events.log and config.resolved.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
