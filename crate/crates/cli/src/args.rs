use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rdvdl_core::monitor::StaticWeight;

#[derive(Debug, Parser)]
#[command(
    name = "rdvdl",
    version,
    about = "Dynamic process monitoring with sparse Bayesian dictionaries and low-rank VAR dynamics"
)]
pub struct Cli {
    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate normal and faulty electrolyzer plant data as CSV.
    Simulate(SimulateArgs),
    /// Fit a monitoring model on normal operating data.
    Train(TrainArgs),
    /// Score a data file against a trained model.
    Detect(DetectArgs),
    /// Rank variables by reconstruction-based contribution.
    Diagnose(DiagnoseArgs),
    /// Compare the model with PCA, DPCA, DiPCA and DiCCA on one scenario.
    Baseline(BaselineArgs),
    /// Redraw charts and the summary from CSV outputs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory for the generated CSV files.
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,

    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Samples per file.
    #[arg(long, short = 'n', default_value_t = 1000)]
    pub samples: usize,

    /// Faults to generate, comma separated (1..=10) [default: 1,5,9].
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=10))]
    pub fault_id: Vec<u8>,

    /// One-based index of the first faulty sample.
    #[arg(long, default_value_t = 201, value_parser = clap::value_parser!(u64).range(1..))]
    pub onset: u64,

    /// Feed faults through the plant dynamics instead of adding them to the
    /// measurements.
    #[arg(long, default_value_t = false)]
    pub propagate: bool,

    /// Only write the normal-operation file.
    #[arg(long, default_value_t = false, conflicts_with_all = ["fault_id", "scenario"])]
    pub normal_only: bool,

    /// Scenario file (TOML); its settings replace the flags above.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StaticWeightArg {
    Measurement,
    Reconstruction,
    Identity,
}

impl From<StaticWeightArg> for StaticWeight {
    fn from(w: StaticWeightArg) -> Self {
        match w {
            StaticWeightArg::Measurement => StaticWeight::Measurement,
            StaticWeightArg::Reconstruction => StaticWeight::Reconstruction,
            StaticWeightArg::Identity => StaticWeight::Identity,
        }
    }
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV (one column per variable).
    #[arg(long)]
    pub input: PathBuf,

    /// The input has no header row; variables are named V1..VP.
    #[arg(long, default_value_t = false)]
    pub no_header: bool,

    /// Replace non-finite cells with the previous row's value.
    #[arg(long, default_value_t = false)]
    pub forward_fill: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Random seed of the dictionary fit.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Confidence level of the control limits, in (0, 1).
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,

    /// VAR lag order.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub lags: u64,

    /// VAR rank [default: largest singular value gap].
    #[arg(long, conflicts_with = "lambda")]
    pub rank: Option<usize>,

    /// L1 penalty of the VAR fit; replaces the rank constraint.
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Atom budget K [default: one per variable].
    #[arg(long)]
    pub atoms: Option<usize>,

    /// OMP sparsity cap [default: mean active atoms per training sample, rounded up].
    #[arg(long)]
    pub tmax: Option<usize>,

    /// Relative lower-bound change that stops the dictionary fit.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,

    /// Maximum dictionary sweeps.
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,

    /// Independent dictionary initializations; the best bound is kept.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,

    /// Beta prior shape a0.
    #[arg(long, default_value_t = 1.0)]
    pub a0: f64,
    /// Beta prior shape b0.
    #[arg(long, default_value_t = 1.0)]
    pub b0: f64,
    /// Weight-precision Gamma shape c0.
    #[arg(long, default_value_t = 1e-6)]
    pub c0: f64,
    /// Weight-precision Gamma rate d0.
    #[arg(long, default_value_t = 1e-6)]
    pub d0: f64,
    /// Noise-precision Gamma shape e0.
    #[arg(long, default_value_t = 1e-6)]
    pub e0: f64,
    /// Noise-precision Gamma rate f0.
    #[arg(long, default_value_t = 1e-6)]
    pub f0: f64,

    /// Weight matrix of the static statistic.
    #[arg(long, value_enum, default_value_t = StaticWeightArg::Measurement)]
    pub static_weight: StaticWeightArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Directory for the model bundle and training report.
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,

    /// Bundle path [default: <output-dir>/model.json].
    #[arg(long = "model")]
    pub model_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Trained model bundle.
    #[arg(long)]
    pub model: PathBuf,

    /// Directory for the detection CSV and chart.
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,

    /// Only alarm after 3 consecutive exceedances.
    #[arg(long, default_value_t = false)]
    pub debounce: bool,

    /// Exit with status 4 when the fraction of alarmed samples exceeds this.
    #[arg(long)]
    pub fail_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Trained model bundle.
    #[arg(long)]
    pub model: PathBuf,

    /// Directory for the contribution CSV and chart.
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,

    /// One-based first sample of the diagnosis window.
    #[arg(long, default_value_t = 201, value_parser = clap::value_parser!(u64).range(1..))]
    pub onset: u64,

    /// Samples in the window [default: through the end of the file].
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Normal operating data for fitting every method.
    #[arg(long)]
    pub train: PathBuf,

    /// Pre-trained model bundle; when absent the model is trained on
    /// --train with the settings below.
    #[arg(long)]
    pub model: Option<PathBuf>,

    #[command(flatten)]
    pub settings: ModelArgs,

    /// Directory for per-method detection CSVs and the summary.
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,

    /// One-based index of the first faulty sample in --input.
    #[arg(long, default_value_t = 201, value_parser = clap::value_parser!(u64).range(1..))]
    pub onset: u64,

    /// Samples after the onset excluded from the detection rate.
    #[arg(long, default_value_t = 20)]
    pub settle: usize,

    /// Cumulative variance share that sets the PCA component count.
    #[arg(long, default_value_t = 0.9)]
    pub variance_fraction: f64,

    /// Latent components of DiPCA and DiCCA [default: the PCA count].
    #[arg(long)]
    pub components: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding detection, contribution and summary CSVs.
    #[arg(long)]
    pub input: PathBuf,

    /// Directory for the charts and report [default: the input directory].
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}
