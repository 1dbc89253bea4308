mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// CATE estimation under missing-not-at-random covariates, treatment and outcome.
#[derive(Debug, Parser)]
#[command(name = "mnar-cate", version)]
pub struct Cli {
    /// Base seed for simulation, imputation and resampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON or TOML file with scenario, study or model settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset; writes observed.csv, oracle.csv and scenario.json.
    Simulate(SimulateArgs),
    /// Estimate the CATE at one covariate value.
    Estimate(EstimateArgs),
    /// Refit the parametric model over a grid of response-model offsets.
    Sensitivity(SensitivityArgs),
    /// Run the simulation study.
    Bench(BenchArgs),
    /// Check the two non-identification counterexamples in exact arithmetic.
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Bin,
    Cont,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Np,
    Para,
    Oracle,
    Cca,
    MissInd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Bernoulli,
    Gaussian,
    TwoPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Warm,
    Cold,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "bin")]
    pub x: Kind,
    #[arg(long, value_enum, default_value = "bin")]
    pub t: Kind,
    #[arg(long, value_enum, default_value = "bin")]
    pub y: Kind,
    /// A1, A2 or A3.
    #[arg(long, default_value = "A2")]
    pub assumption: String,
    /// Zero treatment effect variant.
    #[arg(long)]
    pub null: bool,
    /// Binary covariate and treatment with a semicontinuous outcome.
    #[arg(long, conflicts_with = "null")]
    pub two_part: bool,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
}

/// Data and model options shared by `estimate` and `sensitivity`.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Observed-data CSV with columns x1..xp,t,y,rx1..rxp,rt,ry.
    #[arg(long)]
    pub data: PathBuf,
    /// Missingness assumption: A1, A2, A3 or A3:<column>.
    #[arg(long)]
    pub assumption: Option<String>,
    /// Covariate kinds, comma separated; inferred from the data when absent.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub x_kinds: Option<Vec<Kind>>,
    #[arg(long, value_enum)]
    pub t_kind: Option<Kind>,
    #[arg(long, value_enum)]
    pub y_kind: Option<Kind>,
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    /// Query covariate values, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub t1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t0: Option<f64>,
    /// Bootstrap resamples; no interval when absent.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "para")]
    pub method: Method,
    /// Fully observed CSV for the oracle method.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub hi: f64,
    #[arg(long, default_value_t = 21)]
    pub points: usize,
    #[arg(long, value_enum, default_value = "warm")]
    pub mode: Mode,
    /// Also write sensitivity.svg (requires --out).
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Assumptions to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "A1,A2,A3")]
    pub assumptions: Vec<String>,
    /// Use the zero-effect variant of every scenario.
    #[arg(long)]
    pub null: bool,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Estimators, comma separated: oracle, cca, miss-ind, np, para.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// One line per finished replicate on stderr.
    #[arg(long)]
    pub log: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Config(String),
    /// The estimator or simulation failed.
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl From<mnar_cate::Error> for CliError {
    fn from(e: mnar_cate::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Failure(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Config(m) | CliError::Failure(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.exit_code())
        }
    }
}
