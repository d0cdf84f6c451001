use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use inert_drift_core::harness::{self, ExperimentConfig, HarnessError, LegOutcome};

/// Simulation and numerical checks for a stable process with inert drift
/// on the circle.
#[derive(Debug, Parser)]
#[command(name = "inert-drift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted `KEY=VALUE` override, applied in order. May repeat.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate one trajectory and write it as CSV.
    Simulate,
    /// Ergodic sampling and goodness-of-fit against the stationary law.
    Stationary,
    /// Quadrature checks of the nonlocal generator.
    GeneratorCheck,
    /// Flow derivative bounds and the semigroup derivative comparison.
    FlowCheck,
    /// Every leg in sequence.
    All,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<Vec<LegOutcome>, HarnessError> {
    let config = load(cli)?;
    Ok(match cli.command {
        Command::Simulate => vec![harness::run_simulate(&config)?],
        Command::Stationary => vec![harness::run_stationary(&config)?],
        Command::GeneratorCheck => vec![harness::run_generator_checks(&config)?],
        Command::FlowCheck => vec![harness::run_flow_checks(&config)?],
        Command::All => harness::run_all(&config)?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(legs) => {
            for leg in &legs {
                let status = if leg.pass { "pass" } else { "FAIL" };
                println!("{:<10} {status}  {}", leg.leg, leg.dir.display());
            }
            if legs.iter().all(|l| l.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
