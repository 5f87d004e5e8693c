//! Command-line front end for the compression planner and the
//! training simulator.
//!
//! Exit codes: 0 success, 2 usage, 3 bad or infeasible data,
//! 4 training divergence.

mod args;
mod commands;
mod csvio;
mod docs;
mod manifest;

use clap::Parser;
use greco_core::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "greco",
    version,
    about = "Plan and simulate adaptive layer-wise gradient compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Compute a budgeted per-layer compression plan from a gradient
    /// trace.
    Plan(commands::plan::PlanArgs),
    /// Run the deterministic data-parallel training simulation.
    Simulate(commands::simulate::SimulateArgs),
    /// Generate synthetic per-bucket sync timing samples.
    TimingCollect(commands::timing::CollectArgs),
    /// Fit a linear per-bucket timing model to collected samples.
    TimingFit(commands::timing::FitArgs),
    /// Summarize a simulation run directory as CSV.
    Report(commands::report::ReportArgs),
}

fn init_thread_pool() -> CliResult<()> {
    let Ok(raw) = std::env::var("GRECO_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("GRECO_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Plan(args) => commands::plan::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::TimingCollect(args) => commands::timing::collect(args),
        Command::TimingFit(args) => commands::timing::fit(args),
        Command::Report(args) => commands::report::run(args),
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = init_thread_pool().and_then(|()| run(&cli));
    let code = match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => 4,
                _ => 3,
            }
        }
    };
    std::process::exit(code);
}
