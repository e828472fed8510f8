//! Command-line front end: train and evaluate the distance surrogate, run
//! scenarios, sweep scenario families, and export plot-ready series.
//!
//! Exit codes: 0 success, 1 task failure (episode did not succeed), 2
//! configuration error, 3 internal fault.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ctnav_core::sim::Mode;

/// Environment variable consulted for the movability endpoint when the flag
/// is absent.
pub const VLM_ENDPOINT_ENV: &str = "CTNAV_VLM_ENDPOINT";

#[derive(Parser)]
#[command(name = "ctnav", version, about = "Contact-tolerant navigation sandbox")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Execution mode for episodes.
    #[arg(long, global = true, default_value = "lockstep")]
    mode: Mode,

    /// Output directory for traces, reports, and tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Use the exact dual solver instead of the learned surrogate.
    #[arg(long, global = true)]
    exact_solver: bool,

    /// Remote movability endpoint URL; overrides CTNAV_VLM_ENDPOINT. Absent
    /// both, the ground-truth oracle is used.
    #[arg(long, global = true)]
    vlm_endpoint: Option<String>,

    /// Remote movability endpoint timeout in seconds.
    #[arg(long, global = true, default_value_t = 10.0)]
    vlm_timeout: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate demonstrations, train the dual surrogate, and write the
    /// model file plus a JSON training report.
    TrainDnn(commands::train::TrainArgs),
    /// Evaluate a trained surrogate on fresh samples.
    EvalDnn(commands::train::EvalArgs),
    /// Run one scenario episode; writes a JSONL trace and a metrics JSON.
    Run(commands::run::RunArgs),
    /// Run a scenario family sweep and write an aggregate CSV.
    Sweep(commands::sweep::SweepArgs),
    /// Convert traces in a directory into plot-ready CSV series.
    Report(commands::report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = commands::Globals {
        seed: cli.seed,
        mode: cli.mode,
        out: cli.out.clone(),
        exact_solver: cli.exact_solver,
        vlm_endpoint: cli
            .vlm_endpoint
            .clone()
            .or_else(|| std::env::var(VLM_ENDPOINT_ENV).ok()),
        vlm_timeout: cli.vlm_timeout,
    };
    let result = match &cli.command {
        Command::TrainDnn(args) => commands::train::train(args, &globals),
        Command::EvalDnn(args) => commands::train::eval(args, &globals),
        Command::Run(args) => commands::run::run(args, &globals),
        Command::Sweep(args) => commands::sweep::sweep(args, &globals),
        Command::Report(args) => commands::report::report(args, &globals),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
