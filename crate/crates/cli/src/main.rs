mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use satblend::pipeline::DEFAULT_SEED;

/// Blend gridded satellite precipitation with gauge observations.
#[derive(Debug, Parser)]
#[command(name = "satblend", version)]
pub struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic gauge and product data set.
    Synth(SynthArgs),
    /// Build predictor-set feature tables from input tables.
    Features(FeaturesArgs),
    /// Run the full split, fit, combine and evaluate protocol.
    Experiment(ExperimentArgs),
    /// Permutation and gain importance of base learners and predictors.
    Importance(ImportanceArgs),
    /// Re-render a JSON experiment report as CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Directory holding stations.csv, observations.csv, product_a.csv and
    /// optionally product_b.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub stations: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub observations: Option<PathBuf>,
    /// Product file; give twice for product A then product B.
    #[arg(long = "product", conflicts_with = "data")]
    pub products: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Predictor set to run (1, 2 or 3); repeatable.
    #[arg(long = "predictor-set", value_parser = clap::value_parser!(u8).range(1..=3))]
    pub predictor_sets: Vec<u8>,
    /// JSON experiment configuration; flags override its scalars.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clamp negative predictions to zero.
    #[arg(long)]
    pub clip_zero: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub stations: Option<usize>,
    #[arg(long)]
    pub months: Option<usize>,
    /// JSON synthetic data parameters; flags override its scalars.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long = "predictor-set", value_parser = clap::value_parser!(u8).range(1..=3))]
    pub predictor_sets: Vec<u8>,
    #[arg(long, default_value = "features")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Permutation repeats per feature.
    #[arg(long, default_value_t = satblend::importance::DEFAULT_REPEATS)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json written by `experiment`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<satblend::Error> for Failure {
    fn from(e: satblend::Error) -> Self {
        match e {
            satblend::Error::Numeric(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
