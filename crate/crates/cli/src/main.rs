//! `fspnet` command-line driver.

mod commands;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or unmet preconditions: exit 1.
    Usage(String),
    /// Anything that fails while running: exit 2.
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fspnet",
    version,
    about = "Amortized spectral fitting: data, training, inference and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand takes.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed; defaults to FSPNET_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; explicit flags win over its entries.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset file.
    Generate(GenerateArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Draw flow posteriors for every spectrum of a dataset.
    Infer(InferArgs),
    /// Run Metropolis-Hastings chains on dataset spectra.
    Mcmc(McmcArgs),
    /// PCC, linear fits, reconstruction scores and figures.
    Evaluate(EvaluateArgs),
    /// Coverage against truths and the self-consistency check.
    Coverage(CoverageArgs),
    /// Flow versus fit and MCMC timing.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub noisy: Option<bool>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Per-row exposures uniform in [min, max] seconds.
    #[arg(long)]
    pub exposure_min: Option<f64>,
    #[arg(long)]
    pub exposure_max: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub stage: Option<String>,
    /// Training dataset.
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Validation dataset; without it the training file is split.
    #[arg(long, value_name = "FILE")]
    pub val: Option<PathBuf>,
    /// Checkpoint of the previous stage.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub outdir: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub decoder_free: Option<bool>,
    #[arg(long)]
    pub w_rec: Option<f64>,
    #[arg(long)]
    pub w_lat: Option<f64>,
    #[arg(long)]
    pub w_nf: Option<f64>,
    /// Training share when splitting a single file.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Only the first N spectra.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct McmcArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    /// Kept steps after burn-in.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Chains for the first N spectra.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Start point: `centre` of the prior box or the generating `truth`.
    #[arg(long)]
    pub start: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Extra scored model as NAME=CHECKPOINT; repeatable.
    #[arg(long, value_name = "NAME=FILE")]
    pub compare: Vec<String>,
    /// Also score a 130-step greedy fit per spectrum.
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub fit: Option<bool>,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    /// Spectra timed.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub chain_steps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub effective_samples: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Mcmc(a) => commands::mcmc(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Coverage(a) => commands::coverage(a),
        Command::Benchmark(a) => commands::benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
