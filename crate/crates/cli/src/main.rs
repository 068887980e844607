//! Entry point for the `dro` binary.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 numerical
//! failure, 4 audit violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dro_cli::{cmd_bench, cmd_bias, cmd_gradcheck, cmd_oracle, cmd_solve};

#[derive(Parser)]
#[command(name = "dro", about = "Distributionally robust optimization runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the INI-style run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override; wins over the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver; write a trace and a summary.
    Solve(RunArgs),
    /// Certified worst-case weights for an explicit instance.
    Oracle(RunArgs),
    /// Mini-batch bias study with the analytic bound.
    Bias(RunArgs),
    /// Compare all four solvers across seeds.
    Bench(RunArgs),
    /// Finite-difference audits of all gradients.
    Gradcheck(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve::run(&a.config, a.seed, &a.out),
        Command::Oracle(a) => cmd_oracle::run(&a.config, a.seed, &a.out),
        Command::Bias(a) => cmd_bias::run(&a.config, a.seed, &a.out),
        Command::Bench(a) => cmd_bench::run(&a.config, a.seed, &a.out),
        Command::Gradcheck(a) => cmd_gradcheck::run(&a.config, a.seed, &a.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
