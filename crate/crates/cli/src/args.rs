use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "faker-air", version, about = "Synthetic air-quality forecasting: data, training, alignment, verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the dense field, sample stations and write train/val/test splits.
    Datagen(DatagenArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Score a checkpoint per lead time on one split.
    Eval(EvalArgs),
    /// Run a factorial ablation suite and write a comparison table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Configuration file (key = value lines, dotted keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed. For `datagen` this is the data seed, otherwise the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override one configuration key, e.g. `--set sft.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Sft,
    Grpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Directory written by `datagen`. Without it the dataset is regenerated in memory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub stage: Stage,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Epochs for the selected stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SFT rollout horizon H (1 is teacher forcing).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// SFT step-weight floor b.
    #[arg(long)]
    pub weight_floor: Option<f64>,
    /// Continue SFT from this checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Training source for the selected stage: obs, dense or fused.
    #[arg(long)]
    pub source: Option<String>,
    /// GRPO start point (required for `train grpo`).
    #[arg(long)]
    pub sft_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub h_min: Option<usize>,
    #[arg(long)]
    pub h_max: Option<usize>,
    /// GRPO reward: aqi or mse.
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long, value_enum)]
    pub curriculum: Option<Switch>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated lead times in hours, multiples of 6 up to 120.
    #[arg(long)]
    pub leads: Option<String>,
    /// Overall column: pooled or mean.
    #[arg(long)]
    pub overall: Option<String>,
    /// Split to score.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Score only grid cells that contain a station.
    #[arg(long)]
    pub station_mask: bool,
    /// Also write the forecast fields of the first initialization.
    #[arg(long)]
    pub dump_fields: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    SftAxes,
    GrpoAxes,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    pub suite: Suite,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Baseline for the GRPO suite; trained from the configuration when absent.
    #[arg(long)]
    pub sft_checkpoint: Option<PathBuf>,
}
