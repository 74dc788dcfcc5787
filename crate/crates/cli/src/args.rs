use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use opic_core::models::{LossKind, ModelKind};

#[derive(Debug, Parser)]
#[command(name = "opic", version, about = "Individualized task-contrast prediction on icosphere meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort into a dataset directory.
    Synth(SynthArgs),
    /// Train one model and save its checkpoint and training log.
    Train(TrainArgs),
    /// Leave-one-group-out training with per-fold and merged predictions.
    Logo(LogoArgs),
    /// Predict every task for the test subjects.
    Predict(PredictArgs),
    /// Score prediction directories against the test subjects.
    Eval(EvalArgs),
    /// Print a summary table from an evaluation directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with a `[synth]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
    pub hemispheres: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    /// TOML file with `[train]` and `[net]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Backbone widths, finest level first.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Extra epochs with the rc loss after the main schedule.
    #[arg(long)]
    pub rc_finetune_epochs: Option<usize>,
    /// Train with an all-zero conditioning map.
    #[arg(long)]
    pub ablate_group_average: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "opic")]
    pub model: ModelKind,
    #[arg(long)]
    pub holdout_group: Option<String>,
    /// Single task excluded from training; repeatable.
    #[arg(long = "holdout-task")]
    pub holdout_tasks: Vec<String>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct LogoArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long, conflicts_with = "linear")]
    pub checkpoint: Option<PathBuf>,
    /// Fit the per-parcel linear baseline on train and val subjects instead.
    #[arg(long)]
    pub linear: bool,
    /// Method label for every prediction (default: derived from the model).
    #[arg(long)]
    pub method: Option<String>,
    /// Condition on an all-zero map instead of each task's group average.
    #[arg(long)]
    pub zero_map: bool,
    /// Predict only this task (repeatable; default: every task).
    #[arg(long = "task")]
    pub tasks: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction directory; repeatable.
    #[arg(long = "predictions", required = true)]
    pub predictions: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation directory written by `eval`.
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
