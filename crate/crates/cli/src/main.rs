//! `metastab`: eps sweeps, coupling checks and Monte Carlo runs from a JSON
//! scenario file, with CSV reports.
//!
//! Exit codes: 0 when every check passes, 2 when a check fails, 3 on a
//! configuration error, 1 on any other failure.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::scenario::{ConfigError, Scenario};

#[derive(Debug, Parser)]
#[command(name = "metastab", version, about = "Eigenfunction couplings of a double-well diffusion and a two-state chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory; overrides the scenario's `outputs`.
    #[arg(long, global = true, env = "METASTAB_OUT")]
    out: Option<PathBuf>,
    /// Seed for Monte Carlo runs; overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Spectral diagnostics per eps: spectral.csv
    Spectral,
    /// Family coupling per eps: coupling.csv
    Couple,
    /// Monte Carlo checks at the mc eps values: mc.csv
    Simulate,
    /// Spectral, quadrature and coupling reports together
    Sweep,
    /// Predicted against observed conditions: verify.csv, verify_mc.csv
    Verify,
}

const EXIT_ASSERTION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn run(cli: &Cli) -> anyhow::Result<Vec<String>> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| scenario::config_err("--scenario is required"))?;
    let sc = Scenario::load(path)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| scenario::config_err(e.to_string()))?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| sc.outputs.clone())
        .unwrap_or_else(|| PathBuf::from("metastab-out"));
    std::fs::create_dir_all(&out)?;
    let ctx = Ctx { sc: &sc, out: &out, seed: cli.seed, verbose: cli.verbose };
    match cli.command {
        Command::Spectral => commands::spectral(&ctx),
        Command::Couple => commands::couple(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Verify => commands::verify(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("FAIL {f}");
            }
            ExitCode::from(EXIT_ASSERTION)
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
