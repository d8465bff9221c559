use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use potq_core::calib::GradMode;
use potq_core::synth::WeightDist;

#[derive(Debug, Parser)]
#[command(
    name = "potq",
    version,
    about = "Power-of-two post-training weight quantization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a 2-D PTEN weight matrix into a POTQ file.
    Quantize(QuantizeArgs),
    /// Refine the scales of a POTQ file against calibration activations.
    Calibrate(CalibrateArgs),
    /// Expand a POTQ file into an FP16 PTEN tensor.
    Dequantize(DequantizeArgs),
    /// Compare a POTQ file with the original weights.
    Eval(EvalArgs),
    /// Time integer-path and float-path dequantization.
    Bench(BenchArgs),
    /// Write seeded synthetic tensors.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// One weight matrix, Y = X W.
    Linear,
    /// Transformer block; weights stacked as [wq; wk; wv; w1; w2], each d x d.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Gaussian,
    Laplace,
}

impl From<DistArg> for WeightDist {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Gaussian => WeightDist::Gaussian,
            DistArg::Laplace => WeightDist::Laplace,
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub bits: u32,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 200)]
    pub grid_count: usize,
    /// Use b = 1 for every group instead of the grid search.
    #[arg(long)]
    pub skip_step1: bool,
    /// CSV of selected multipliers (bin_lower,count).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub model: PathBuf,
    pub weights: PathBuf,
    /// Activations, (samples, d) or (batch, tokens, d).
    pub calib: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Defaults to 40 at 2 bits and 10 otherwise.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
    /// Samples per gradient step.
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Linear)]
    pub mode: ModeArg,
    /// detach-exponent or literal-ste.
    #[arg(long, default_value = "detach-exponent", value_parser = parse_grad_mode)]
    pub grad_mode: GradMode,
    /// CSV of the loss after each epoch.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_grad_mode(s: &str) -> Result<GradMode, String> {
    s.parse().map_err(|e: potq_core::PotError| e.to_string())
}

#[derive(Debug, Args)]
pub struct DequantizeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub original: PathBuf,
    pub model: PathBuf,
    /// Activations to measure output error on.
    pub inputs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Linear)]
    pub mode: ModeArg,
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 4096)]
    pub rows: usize,
    #[arg(long, default_value_t = 4096)]
    pub cols: usize,
    #[arg(long, default_value_t = 3)]
    pub bits: u32,
    #[arg(long, default_value_t = 128)]
    pub group_size: usize,
    /// Thread counts to time, e.g. 1,8. Defaults to 1 and all cores.
    #[arg(long, value_delimiter = ',')]
    pub threads: Vec<usize>,
    /// Timed runs per configuration; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// A rows x cols weight matrix.
    Weights(GenWeightsArgs),
    /// A (batch, tokens, dim) activation tensor.
    Acts(GenActsArgs),
}

#[derive(Debug, Args)]
pub struct GenWeightsArgs {
    pub output: PathBuf,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, value_enum, default_value_t = DistArg::Gaussian)]
    pub dist: DistArg,
    #[arg(long, default_value_t = 0.02)]
    pub std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenActsArgs {
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub tokens: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub std: f64,
    /// Share of input channels with boosted variance.
    #[arg(long, default_value_t = 0.0)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = 20.0)]
    pub outlier_gain: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
