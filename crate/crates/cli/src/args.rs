use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lanekit::head::FusionStrategy;

use crate::config::Protocol;

/// Synthetic 3D lane detection pipeline: build datasets, train anchor heads,
/// predict, refine, evaluate and plot.
#[derive(Debug, Parser)]
#[command(name = "lanekit", version)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for scene-parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long, env = "LANEKIT_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Fit the anchor head(s) and write a checkpoint plus the loss curve.
    Train(TrainArgs),
    /// Write lane predictions for every scene of a split.
    Predict(PredictArgs),
    /// Apply the equal-width post-optimizer to predictions.
    Refine(RefineArgs),
    /// Score predictions against the ground truth.
    Eval(EvalArgs),
    /// Draw top-view and side-view SVG overlays.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Number of samples.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Seed for layouts and feature noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scene family: flat_curved, up_down or hill.
    #[arg(long)]
    pub profile: Option<String>,
    /// Hide random lane spans and zero their features.
    #[arg(long)]
    pub occlusion: bool,
    /// Also write the previous frame of every sample.
    #[arg(long)]
    pub temporal: bool,
    /// Fraction of samples placed in the validation split.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Gaussian noise added to the lane channels.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path (default: <out>/model.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer width.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lambda_cls: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regression passes to train (one head per pass).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Train with temporal fusion: linear_fusion or weighted_sum.
    #[arg(long)]
    pub fusion: Option<FusionStrategy>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split to predict: train, val or all.
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Regression passes (default: every head in the checkpoint).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Feed the previous frame to a fused checkpoint.
    #[arg(long)]
    pub temporal: bool,
    /// Require the checkpoint to use this fusion strategy (implies --temporal).
    #[arg(long)]
    pub fusion: Option<FusionStrategy>,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    #[arg(long)]
    pub min_score: Option<f64>,
    /// Export the ground truth as predictions instead of running a model.
    #[arg(long)]
    pub from_gt: bool,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Prediction directory written by `predict`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Weight of the offset penalty.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Comma-separated scene names (default: the first --max scenes).
    #[arg(long, value_delimiter = ',')]
    pub scenes: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub max: usize,
}
