//! `mdpd`: simulate, fit, predict, evaluate and run experiment grids.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use mdpd_core::MdpdError;

#[derive(Debug, Parser)]
#[command(
    name = "mdpd",
    version,
    about = "Stagewise EM for sparse mixtures of discrete product distributions"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic crowdsourcing dataset with its truth.
    Simulate(SimulateArgs),
    /// Fit a model and write it with its per-iteration trace.
    Fit(FitArgs),
    /// Predict item labels with a fitted model.
    Predict(PredictArgs),
    /// Report likelihood, CMI, sparsity and (with truth) prediction error.
    Eval(EvalArgs),
    /// Run an alpha-sweep by seeds experiment grid from a TOML file.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    AlphaSparse,
    Decaying,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Informative fraction (alpha-sparse).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Accuracy of informative workers (alpha-sparse).
    #[arg(long, default_value_t = 0.6)]
    pub p: f64,
    /// Number of informative workers (decaying).
    #[arg(long, default_value_t = 30)]
    pub n_informative: usize,
    #[arg(long, default_value_t = 0.7)]
    pub p_start: f64,
    #[arg(long, default_value_t = 0.45)]
    pub p_end: f64,
    /// Output directory for labels.csv, truth.csv and truth.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Stagewise,
    EmRandom,
    EmMv,
    Refine,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Stagewise => "stagewise",
            Algorithm::EmRandom => "em-random",
            Algorithm::EmMv => "em-mv",
            Algorithm::Refine => "refine",
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(value_enum)]
    pub algorithm: Algorithm,
    /// Label triplet file (`item,worker,label`).
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with fit settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k_target: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cmi_threshold: Option<f64>,
    #[arg(long)]
    pub ll_tolerance: Option<f64>,
    /// Split even when the chosen worker pair is already informative.
    #[arg(long)]
    pub split_when_in_set: bool,
    /// Comma-separated label vocabulary, in category order.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Starting model for `refine`.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub out_trace: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorArg {
    /// Posterior from the model's informative workers (all workers if it has none).
    #[default]
    Informative,
    /// Posterior from every worker.
    Full,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum MatchingArg {
    #[default]
    Aligned,
    BestPermutation,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub posterior: PosteriorArg,
    /// Output `item,label` file; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `item,label` truth file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub matching: MatchingArg,
    #[arg(long, value_enum, default_value_t)]
    pub posterior: PosteriorArg,
    /// Per-worker separation above this counts as informative.
    #[arg(long, default_value_t = mdpd_core::info::DEFAULT_L0_THRESHOLD)]
    pub l0_threshold: f64,
    /// Penalty weight reported with the sparsity diagnostic.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Error caused by how the program was invoked.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Writes to stdout; a closed pipe downstream is not an error.
pub fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.downcast_ref::<UsageError>().is_some()
        || matches!(err.downcast_ref::<MdpdError>(), Some(MdpdError::InvalidConfig(_)));
    if is_usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Predict(args) => commands::predict(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Grid(args) => grid::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
