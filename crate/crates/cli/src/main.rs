//! `pnlrank`: fit rank regressions, estimate causal orderings, simulate
//! data and run benchmark grids.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 invalid input or
//! configuration, 3 optimizer did not converge (artifacts are still
//! written), 4 ordering failed.

mod bench;
mod config;
mod fit;
mod manifest;
mod order_cmd;
mod simulate;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Convergence(String),
    Ordering(String),
    Io(String),
}

impl CliError {
    pub fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Ordering(_) => 4,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io_error",
            CliError::Validation(_) => "invalid_input",
            CliError::Convergence(_) => "did_not_converge",
            CliError::Ordering(_) => "ordering_failed",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Convergence(m) | CliError::Ordering(m) | CliError::Io(m) => {
                f.write_str(m)
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pnlrank", version, about = "Rank-based regression and causal ordering for post-nonlinear models")]
struct Cli {
    /// Worker threads [default: all cores].
    #[arg(long, global = true, env = "PNLRANK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one regression of a target column on the other columns.
    Fit(fit::FitArgs),
    /// Estimate a causal ordering of all columns.
    Order(order_cmd::OrderArgs),
    /// Run a replicated simulation grid and write tables and plots.
    Benchmark(bench::BenchArgs),
    /// Draw a random DAG and sample data from it.
    Simulate(simulate::SimArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let name = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Order(_) => "order",
        Command::Benchmark(_) => "benchmark",
        Command::Simulate(_) => "simulate",
    };
    let mut man = RunManifest::new(name, threads);
    let outcome = if threads == 0 {
        Err(CliError::Validation("--threads must be at least 1".into()))
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))
            .and_then(|pool| {
                pool.install(|| match &cli.command {
                    Command::Fit(a) => fit::run(a, &mut man),
                    Command::Order(a) => order_cmd::run(a, &mut man),
                    Command::Benchmark(a) => bench::run(a, &mut man),
                    Command::Simulate(a) => simulate::run(a, &mut man),
                })
            })
    };
    man.finish(&outcome);
    if let Err(e) = man.save() {
        eprintln!("warning: could not write manifest: {e}");
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
