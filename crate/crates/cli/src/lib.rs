//! Command-line front end: `synth`, `train`, `predict`, `picp`, `assoc`,
//! `occlude` and `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mccqr_core::synth::Family;
use mccqr_core::{TrainConfig, UncertaintyMode};
use thiserror::Error;

pub use table::Table;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<mccqr_core::Error> for CliError {
    fn from(e: mccqr_core::Error) -> Self {
        use mccqr_core::Error as E;
        let msg = e.to_string();
        match e {
            E::NonFinite(_) | E::Numeric(_) => CliError::Numeric(msg),
            E::InvalidArgument(_) | E::Unsupported(_) => CliError::Usage(msg),
            E::Shape(_) | E::Empty(_) | E::Format(_) | E::RankDeficient { .. } => {
                CliError::Data(msg)
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mccqr",
    version,
    about = "Quantile-regression networks with Monte-Carlo dropout uncertainty"
)]
pub struct Cli {
    /// Maximum worker threads for prediction and occlusion (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known conditional quantiles
    Synth(SynthArgs),
    /// Train a model and write it as JSON
    Train(TrainArgs),
    /// Monte-Carlo predictive distributions: median, sigma, interval bounds
    Predict(PredictArgs),
    /// Interval coverage (PICP) per nominal level
    Picp(PicpArgs),
    /// Association of a predictor with raw and uncertainty-corrected gaps
    Assoc(AssocArgs),
    /// Occlusion-sensitivity map with a per-region contrast fit
    Occlude(OccludeArgs),
    /// Cross-validated median absolute error of several models
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// linear-hetero, sine-hetero or age-like
    #[arg(long)]
    pub family: Family,
    #[arg(long)]
    pub n: usize,
    /// Feature count (column 0 carries the signal for the heteroscedastic families)
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise standard deviation of age-like features
    #[arg(long)]
    pub feature_noise: Option<f64>,
    /// Writes PREFIX_features.csv, PREFIX_targets.csv and PREFIX_oracle.json
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Number of equally spaced quantile levels
    #[arg(long, default_value_t = 101)]
    pub quantiles: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl NetArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch,
            dropout_rate: self.dropout,
            quantiles: self.quantiles,
            hidden: self.hidden,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Mccqr,
    Ann,
    Lasso,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with a header; an `id` column is optional
    #[arg(long)]
    pub data: PathBuf,
    /// Target column name
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Separate CSV holding the target column, row-aligned with --data
    #[arg(long)]
    pub targets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, value_enum, default_value_t = ModelKind::Mccqr)]
    pub model_type: ModelKind,
    /// LASSO penalty on standardized features
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub model_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// full, aleatory or epistemic
    #[arg(long, default_value = "full")]
    pub mode: UncertaintyMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-interval levels to write as lower_L/upper_L columns
    #[arg(long, value_delimiter = ',', default_values_t = mccqr_core::eval::default_levels())]
    pub levels: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PicpArgs {
    /// Output of `predict`
    #[arg(long)]
    pub pred: PathBuf,
    /// CSV with the true targets (not needed when --pred has y_true)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Levels to evaluate (default: every level present in --pred)
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Write the level,picp CSV here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a coverage-versus-level SVG plot here
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Model and features for the quantile-crossing audit
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ResponseArg {
    Bag,
    Bagc,
    Both,
}

#[derive(Debug, Args)]
pub struct AssocArgs {
    /// CSV with y_true, y_pred (or y_pred_median), sigma and covariate columns
    #[arg(long)]
    pub gaps: PathBuf,
    /// Extra covariate columns, row-aligned with --gaps
    #[arg(long)]
    pub covariate_file: Option<PathBuf>,
    #[arg(long)]
    pub predictor: String,
    /// Comma-separated covariates (age is always included)
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_enum, default_value_t = ResponseArg::Both)]
    pub response: ResponseArg,
    /// Write the fit summary as JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OccludeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// CSV with columns region,feature (feature = column name or 0-based index)
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Data column holding a gender code (excluded from features)
    #[arg(long)]
    pub gender_column: Option<String>,
    /// Data column holding a site code (excluded from features)
    #[arg(long)]
    pub site_column: Option<String>,
    #[arg(long)]
    pub allow_overlap: bool,
    /// Long-format CSV of corrected gaps per sample and region
    #[arg(long)]
    pub out: PathBuf,
    /// Write the contrast fit as JSON here
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub target: String,
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelKind::Mccqr, ModelKind::Ann, ModelKind::Lasso])]
    pub models: Vec<ModelKind>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Leave-one-group-out instead of k-fold (e.g. a site column)
    #[arg(long)]
    pub group_column: Option<String>,
    /// Monte-Carlo draws for the MCCQR median
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub net: NetArgs,
    /// Write per-fold errors as CSV here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Picp(a) => commands::picp(&a),
        Command::Assoc(a) => commands::assoc(&a),
        Command::Occlude(a) => commands::occlude(&a),
        Command::Bench(a) => commands::bench(&a),
    })
}
