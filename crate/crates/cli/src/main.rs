//! `corrcv` command-line front end.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use corrcv::bias::Estimator;
use corrcv::cv::Scenario;
use corrcv::model::{Loss, ModelFamily};

#[derive(Debug, Parser)]
#[command(name = "corrcv", version, about = "Bias-corrected cross-validation for correlated data")]
struct Cli {
    /// Worker threads (outputs do not depend on this).
    #[arg(long, global = true, env = "CORRCV_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one synthetic dataset from a simulation config.
    Simulate(SimulateArgs),
    /// Fit the mixed model implied by the dataset's structure.
    Fit(FitArgs),
    /// K-fold cross-validation.
    Cv(CvArgs),
    /// Cross-validation with bias corrections.
    Cvc(CvcArgs),
    /// ROC curve and AUC with threshold-wise corrections.
    Roc(RocArgs),
    /// Repeated simulation study.
    Experiment(ExperimentArgs),
    /// Closed-form vs brute-force w_cv on a built-in fixture.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum StructureArg {
    Iid,
    Clustered,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum FamilyArg {
    Bernoulli,
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Dataset CSV (x1..xp, y, optional entity/day or coord1/coord2/region).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    structure: StructureArg,
    #[arg(long, value_enum, default_value = "bernoulli")]
    family: FamilyArg,
    /// Dispersion of the Gaussian family.
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
}

impl DataArgs {
    fn family(&self) -> corrcv::Result<ModelFamily> {
        Ok(match self.family {
            FamilyArg::Bernoulli => ModelFamily::bernoulli_logit(),
            FamilyArg::Poisson => ModelFamily::poisson_log(),
            FamilyArg::Gaussian => {
                if !(self.phi > 0.0 && self.phi.is_finite()) {
                    return Err(corrcv::Error::InvalidArgument(format!("phi must be positive, got {}", self.phi)));
                }
                ModelFamily::gaussian(self.phi)
            }
        })
    }
}

#[derive(Debug, Clone, Args)]
struct FoldArgs {
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value = "new_all", value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct BootstrapArgs {
    #[arg(long, default_value_t = 200)]
    b: usize,
    #[arg(long, default_value_t = 20)]
    b1: usize,
    #[arg(long, default_value_t = 30)]
    b2: usize,
    #[arg(long, default_value_t = 2000)]
    moment_draws: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation config (JSON); fields not given take the design defaults.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    folds: FoldArgs,
    #[arg(long = "loss", value_parser = parse_loss, required = true)]
    losses: Vec<Loss>,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CvcArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    folds: FoldArgs,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    #[arg(long = "loss", value_parser = parse_loss, required = true)]
    losses: Vec<Loss>,
    #[arg(long = "estimator", value_parser = parse_estimator, default_value = "fast")]
    estimators: Vec<Estimator>,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RocArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    folds: FoldArgs,
    #[command(flatten)]
    bootstrap: BootstrapArgs,
    /// Bootstrap used for the corrections: fast or empirical.
    #[arg(long, value_parser = parse_estimator, default_value = "fast")]
    estimator: Estimator,
    #[arg(long, default_value_t = corrcv::roc::DEFAULT_GRID_POINTS)]
    grid: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value = "lmm_small")]
    fixture: String,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Optional JSON output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_loss(s: &str) -> Result<Loss, String> {
    s.parse::<Loss>().map_err(|e| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse::<Scenario>().map_err(|e| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown estimator '{s}' (expected empirical, fast, canonical or analytic)"))
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input or configuration (exit 2).
    Config(String),
    /// Numerical or I/O failure while running (exit 1).
    Runtime(String),
}

impl From<corrcv::Error> for Failure {
    fn from(e: corrcv::Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Fit(a) => commands::fit(a, &argv),
        Command::Cv(a) => commands::cv(a, &argv),
        Command::Cvc(a) => commands::cvc(a, &argv),
        Command::Roc(a) => commands::roc(a, &argv),
        Command::Experiment(a) => commands::experiment(a, &argv),
        Command::Oracle(a) => commands::oracle(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
