//! `spdc-bell`: fringe scans, parameter sweeps, fringe fitting and Bell-state
//! preparation from a scenario file.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "spdc-bell", version, about = "Pulsed SPDC Bell-state source simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario file (TOML); the built-in default scenario when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Seed for counting noise; overrides the scenario's noise seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Single-threaded deterministic execution.
    #[arg(long, global = true)]
    pub reference: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Coincidence fringe along one knob; writes CSV, a fit report and a manifest.
    Scan(commands::ScanArgs),
    /// Overlap visibility against one source parameter.
    Sweep(commands::SweepArgs),
    /// Fits a fringe CSV (columns axis_value, rate).
    Fit(commands::FitArgs),
    /// Knob settings, fidelity and visibility for a target Bell state.
    Prepare(commands::PrepareArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Scan(a) => commands::scan(&cli.common, &a, &argv),
        Command::Sweep(a) => commands::sweep(&cli.common, &a, &argv),
        Command::Fit(a) => commands::fit(&cli.common, &a, &argv),
        Command::Prepare(a) => commands::prepare(&cli.common, &a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.kind.code())
        }
    }
}
