use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "smartcpd", version, about = "Stochastic mirror descent for CP decomposition")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate ground-truth factors and an observed tensor.
    Synth(SynthArgs),
    /// Decompose a tensor.
    Fit(FitArgs),
    /// Report cost, factor MSE and stationarity of a set of factors.
    Eval(EvalArgs),
    /// Tabulate the two-coordinate majorizers of the generalized KL loss.
    SurrogateGrid(GridArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Comma-separated dimensions, e.g. `20,20,20`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    #[arg(long)]
    pub rank: usize,
    /// poisson, bernoulli, gamma, gaussian or none.
    #[arg(long, default_value = "poisson")]
    pub obs: String,
    /// Signal-to-noise ratio in dB for gamma and gaussian noise.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub a_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub heavy_frac: f64,
    #[arg(long, default_value_t = 10.0)]
    pub heavy_scale: f64,
    /// Normalize factor columns to sum to one.
    #[arg(long)]
    pub simplex: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Re-run the configuration recorded in a `run.json`. Other flags are
    /// ignored except `--out`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Tensor in FROSTT `.tns` format.
    #[arg(long, required_unless_present = "manifest")]
    pub tensor: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub rank: Option<usize>,
    #[arg(long, default_value = "gen-kl")]
    pub loss: String,
    /// Mirror map, or one per mode separated by commas.
    #[arg(long, default_value = "entropy")]
    pub mirror: String,
    /// Constraint, or one per mode separated by commas.
    #[arg(long, default_value = "nonneg")]
    pub constraint: String,
    #[arg(long, default_value = "adagrad")]
    pub schedule: String,
    /// Fibers per iteration, or `auto` for twice the rank.
    #[arg(long, default_value = "auto")]
    pub batch_fibers: String,
    #[arg(long, default_value_t = 1)]
    pub inner_iters: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub stop_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Extra trace rows every this many iterations.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Directory with `factor_<n>.csv` starting factors.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Directory with ground-truth factors, for the MSE column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Step rejections, each doubling the step-size scaling, allowed before a
    /// domain exit aborts the run.
    #[arg(long, default_value_t = 20)]
    pub max_retries: usize,
    /// Record the stationarity measure at every trace row.
    #[arg(long)]
    pub stationarity: bool,
    /// Output directory for factors, trace and manifest.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub tensor: PathBuf,
    /// Directory with the factors to evaluate.
    #[arg(long)]
    pub factors: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "gen-kl")]
    pub loss: String,
    /// Also compute the stationarity measure under this mirror map.
    #[arg(long)]
    pub mirror: Option<String>,
    #[arg(long, default_value = "nonneg")]
    pub constraint: String,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 3.0)]
    pub x: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0])]
    pub h: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 5.0])]
    pub anchor: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub lo: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}
