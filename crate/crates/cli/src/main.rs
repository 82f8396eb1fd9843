//! `spa`: command-line front end for sparsity pattern aggregation.
//!
//! Exit codes: 0 on success, 1 on internal failure, 2 on usage or input
//! errors.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "spa",
    version,
    about = "Sparsity pattern aggregation by exponential weighting"
)]
struct Cli {
    /// Worker threads for replications and enumeration (default: all processors).
    #[arg(long, global = true, env = "SPA_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an aggregate on user data.
    Fit(FitArgs),
    /// Exact aggregation by enumeration, with the full weight table.
    Exact(FitArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
    /// Pretty-print a simulation report.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum SparsityMode {
    Coord,
    Fused,
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Exact,
    Mh,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
struct FitArgs {
    /// Sparsity structure.
    #[arg(long, value_enum, default_value = "coord")]
    mode: SparsityMode,
    /// Design matrix CSV (n rows, M columns).
    #[arg(long)]
    design: PathBuf,
    /// Response CSV (single column, n rows).
    #[arg(long)]
    response: PathBuf,
    /// Noise standard deviation (required; the variance is assumed known).
    #[arg(long)]
    sigma: f64,
    /// Temperature (default 4 sigma^2).
    #[arg(long)]
    beta: Option<f64>,
    /// Groups file: one group per line, 1-based column indices.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Dense M x M CSV for a custom fused map D (default: first differences).
    #[arg(long = "d-matrix")]
    d_matrix: Option<PathBuf>,
    /// Aggregation method for `fit`; `exact` is implied by the `exact` subcommand.
    #[arg(long, value_enum, default_value = "mh")]
    method: Method,
    /// Burn-in iterations.
    #[arg(long, default_value_t = 3000)]
    t0: usize,
    /// Averaging iterations.
    #[arg(long, default_value_t = 7000)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start the chain from this 0/1 pattern instead of the empty one.
    #[arg(long = "warm-start")]
    warm_start: Option<String>,
    #[arg(long = "cache-capacity", default_value_t = 4096)]
    cache_capacity: usize,
    /// Also write the per-iteration chain trace.
    #[arg(long)]
    trace: bool,
    /// Output directory.
    #[arg(long, short)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
struct SimulateArgs {
    /// Scenario file with `key = value` lines; flags override it.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// coordinatewise | fused | group
    #[arg(long)]
    kind: Option<String>,
    #[arg(long = "group-size")]
    group_size: Option<usize>,
    /// Fixed noise level (default: sigma^2 = |X theta*|^2 / (9n)).
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated estimator roster.
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    t0: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ReportArgs {
    /// `report.json` written by `simulate`.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
    Markdown,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a, false),
        Command::Exact(a) => commands::fit(&a, true),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
