use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DATA_ROOT_ENV: &str = "ZDCGAN_DATA_ROOT";

/// Conditional GAN fast simulation of proton ZDC responses.
///
/// Settings come from built-in defaults, then the `--config` file, then
/// flags given on the command line.
#[derive(Debug, Parser)]
#[command(name = "zdcgan", version, about, long_about = None)]
pub struct Cli {
    /// TOML run configuration with one optional section per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic calorimeter dataset.
    Synth(SynthArgs),
    /// Compute per-group statistics of a dataset.
    Stats(StatsArgs),
    /// Train generator, discriminator, and center regressor.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset.
    Eval(EvalArgs),
    /// Sweep the three regularization strengths.
    Gridsearch(GridArgs),
    /// Emit plot-ready histogram and sample data.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of distinct conditions.
    #[arg(long, default_value_t = 64)]
    pub groups: usize,
    /// Samples per condition (at least 2).
    #[arg(long, default_value_t = 8)]
    pub per_group: usize,
    /// Output dataset directory.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset directory.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: Option<PathBuf>,
    /// Output file [default: <data>/stats.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorLossArg {
    NonSaturating,
    Saturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Softplus,
    Relu,
}

/// Optimization and architecture flags shared by `train` and `gridsearch`.
#[derive(Debug, Args)]
pub struct TrainingFlags {
    /// Passes over the training data.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Mini-batch size (at least 2).
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Generator learning rate.
    #[arg(long, default_value_t = 2e-4)]
    pub lr_g: f64,
    /// Discriminator learning rate.
    #[arg(long, default_value_t = 2e-4)]
    pub lr_d: f64,
    /// Regressor learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr_r: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.5)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    /// Random seed for initialization, shuffling, and latent codes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sequential evaluation with bit-identical results per seed.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub strict: bool,
    #[arg(long, value_enum, default_value_t = GeneratorLossArg::NonSaturating)]
    pub generator_loss: GeneratorLossArg,
    #[arg(long, default_value_t = 10)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 4)]
    pub embed_dim: usize,
    #[arg(long, value_enum, default_value_t = ActivationArg::Softplus)]
    pub output_activation: ActivationArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint and train_log.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Diversity strength.
    #[arg(long, default_value_t = 1e-1)]
    pub lambda_div: f64,
    /// Intensity strength.
    #[arg(long, default_value_t = 1e-10)]
    pub lambda_in: f64,
    /// Shower-center strength.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_aux: f64,
    /// Checkpoint every this many epochs (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test dataset directory.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generated responses per test condition.
    #[arg(long, default_value_t = 8)]
    pub samples_per_condition: usize,
    /// Seed of the latent codes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram bins per channel.
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Dataset directory; split into training and test groups.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: Option<PathBuf>,
    /// Output directory for grid_results.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Models trained per cell.
    #[arg(long, default_value_t = 5)]
    pub runs_per_cell: usize,
    /// Diversity strengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 1e-1, 1e0])]
    pub grid_div: Vec<f64>,
    /// Intensity strengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-7, 1e-8, 1e-9, 1e-10, 1e-11])]
    pub grid_in: Vec<f64>,
    /// Shower-center strengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-3, 1e-2])]
    pub grid_aux: Vec<f64>,
    /// Parallel training runs (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Fraction of groups used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
    /// Generated responses per test condition.
    #[arg(long, default_value_t = 8)]
    pub samples_per_condition: usize,
    /// Write the planned cells and seeds without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Report directory written by `eval`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Channels whose histograms are emitted.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 5])]
    pub channels: Vec<usize>,
    /// (condition, true, generated) triples in samples.json; needs
    /// --checkpoint and --data.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: Option<PathBuf>,
    /// Seed of the latent codes for the sample dump.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
