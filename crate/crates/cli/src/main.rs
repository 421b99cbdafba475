//! `evcharge`: fit driving models, solve charging policies, replay and
//! compare them.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evcharge::data_ingest::IngestError;
use evcharge::driving_model::ModelError;
use evcharge::mdp_solver::MdpError;
use evcharge::policy_sim::SimError;
use evcharge::spline_glm::SplineError;
use thiserror::Error;

use config::{RunConfig, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Ingest { context: String, source: IngestError },
    #[error("exit-curve fit: {0}")]
    Spline(#[from] SplineError),
    #[error("driving model: {0}")]
    Model(#[from] ModelError),
    #[error("solver: {0}")]
    Mdp(#[from] MdpError),
    #[error("replay: {0}")]
    Sim(#[from] SimError),
}

impl CliError {
    /// 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Ingest { .. } => 3,
            CliError::Spline(e) => match e {
                SplineError::NotConverged { .. } => 4,
                SplineError::InvalidSettings(_) | SplineError::InvalidKnots(_) => 2,
                SplineError::NoTrials(_) | SplineError::CoefficientCount { .. } => 3,
            },
            CliError::Model(e) => match e {
                ModelError::NotConverged { .. } => 4,
                ModelError::TooFewStates(_) => 2,
                _ => 3,
            },
            CliError::Mdp(e) => mdp_code(e),
            CliError::Sim(e) => match e {
                SimError::Span(_) => 3,
                SimError::PolicyHorizon { .. } | SimError::InitialEnergy(_) => 2,
                SimError::Solver(e) => mdp_code(e),
            },
        }
    }
}

fn mdp_code(e: &MdpError) -> u8 {
    match e {
        MdpError::PriceCoverage { .. } => 3,
        _ => 2,
    }
}

#[derive(Parser)]
#[command(name = "evcharge", version, about = "Optimal EV charging from stochastic driving models")]
struct Cli {
    /// TOML file with the same keys as the long flags plus an `[mdp]` table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the exit curve and the driving model from a trip log.
    Fit,
    /// Solve the charging problem and dump the policy.
    Solve,
    /// Replay policies on the trip log or on simulated scenarios.
    Simulate,
    /// Write a synthetic trip log and price series.
    Generate,
    /// Compare optimal charge-only and V2G policies over all penalties with
    /// every rule of thumb.
    Evaluate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let cfg = RunConfig::resolve(base.overlay(cli.settings))?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| CliError::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    match cli.command {
        Command::Fit => commands::fit(&cfg),
        Command::Solve => commands::solve(&cfg),
        Command::Simulate => commands::simulate(&cfg, false),
        Command::Generate => commands::generate(&cfg),
        Command::Evaluate => commands::simulate(&cfg, true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
