//! Batch front door: parses a scenario config, dispatches one subcommand and
//! writes CSV/JSON artifacts plus a checksum manifest.
//!
//! Exit codes: 0 success, 1 success with warnings (excluded rays, domain
//! departures), 2 configuration error, 3 numerical failure on every ray.

mod config;
mod emit;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::{RunError, Subcommand as Cmd};

#[derive(Parser)]
#[command(name = "nullray", version, about = "Null-geodesic tracing and length-rigidity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Seed override for all sampled choices.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the fan and dump per-ray trajectory CSVs with exit sidecars.
    Trace(RunArgs),
    /// Tabulate time-space lengths (frozen-interval rows when q2 is given).
    Length(RunArgs),
    /// Integrate first variations and the length-variation table.
    Variation(RunArgs),
    /// Full stability report: norms, ratios, measured constants, verdict.
    Rigidity(RunArgs),
    /// Linearized recovery of perturbation coefficients from length data.
    Recover(RunArgs),
    /// Whole-domain chord scan with per-tube verdicts and coverage.
    Scan(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Command::Trace(a) => (Cmd::Trace, a),
        Command::Length(a) => (Cmd::Length, a),
        Command::Variation(a) => (Cmd::Variation, a),
        Command::Rigidity(a) => (Cmd::Rigidity, a),
        Command::Recover(a) => (Cmd::Recover, a),
        Command::Scan(a) => (Cmd::Scan, a),
    };

    if let Some(workers) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("config error: workers: {e}");
            return ExitCode::from(2);
        }
    }

    let config_text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: config: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };

    match run::run_scenario(&config_text, cmd, args.out.as_deref(), args.seed) {
        Ok(outcome) => {
            if outcome.warnings.is_empty() {
                ExitCode::SUCCESS
            } else {
                for w in &outcome.warnings {
                    eprintln!("warning: {w}");
                }
                ExitCode::from(1)
            }
        }
        Err(e @ RunError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ RunError::Numerical(_)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
