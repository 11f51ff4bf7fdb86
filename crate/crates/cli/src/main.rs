#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{Outcome, RunContext};
use config::{ConfigError, ExperimentConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_VERIFICATION: u8 = 5;

/// Random switching between two flows on the torus.
#[derive(Debug, Parser)]
#[command(name = "switchflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample trajectories and write per-mode occupation densities.
    Simulate,
    /// Solve for the invariant densities with the transfer operator.
    Solve,
    /// Run the integration-by-parts, Jacobian and special flow checks.
    VerifyIbp,
    /// Derivative norms of repeated applications of the transfer operator.
    Smoothing,
    /// Shear growth of the special flow.
    SpecialFlow,
    /// Minimum of |det(u1, u0)| over a grid.
    CheckTransversality,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let config = load_config(cli)?;
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = RunContext { config: &config, out };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Solve => commands::solve(&ctx),
        Command::VerifyIbp => commands::verify(&ctx),
        Command::Smoothing => commands::smoothing(&ctx),
        Command::SpecialFlow => commands::special_flow(&ctx),
        Command::CheckTransversality => commands::transversality(&ctx),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<switchflow::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        Some(e) => match e.root() {
            switchflow::Error::InvalidArgument(_) | switchflow::Error::Parse(_) => EXIT_CONFIG,
            switchflow::Error::Io(_) => EXIT_FAILURE,
            _ => EXIT_NUMERICAL,
        },
        None => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("fixed point iteration did not converge; results written and flagged");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Ok(Outcome::VerificationFailed) => {
            eprintln!("verification failed");
            ExitCode::from(EXIT_VERIFICATION)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
