//! Command-line front end: computes scale functions, spectrum constants and
//! covariance matrices, and runs the simulation experiments, writing CSV and
//! JSON artifacts into an output directory.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use config::Config;
use output::Output;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] splitree::Error),

    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    /// 1 configuration, 2 numerical failure, 3 hypothesis rejection.
    fn exit_code(&self) -> u8 {
        use splitree::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Core(E::InvalidParameter(_) | E::NotSupercritical(_) | E::Io { .. }) => 1,
            CliError::Core(E::Hypothesis(_)) => 3,
            CliError::Core(_) | CliError::Validation(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "splitree",
    version,
    about = "Frequency spectrum of splitting trees: formulas and simulations"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Built-in configuration: paper-sec7, birth-death or yule.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Tabulate W, W_theta, survival probability and E N_t.
    Scale,
    /// Spectrum constants c_k, and M (and K) for experiment.k_list.
    Constants,
    /// Simulate populations and write their frequency spectra.
    Simulate,
    /// Central limit experiment with density diagnostics.
    Clt,
    /// Exact EHH against its approximation over a theta grid.
    Ehh,
    /// Oracle checks of the numerical routines for the configured model.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Scale => "scale",
            Command::Constants => "constants",
            Command::Simulate => "simulate",
            Command::Clt => "clt",
            Command::Ehh => "ehh",
            Command::Validate => "validate",
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let mut cfg = Config::load(cli.config.as_deref(), cli.preset.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mut out = Output::new(&cli.out)?;
    let command = cli.command;
    let info = splitree::harness::with_threads(cli.threads, || match command {
        Command::Scale => commands::scale(&cfg, &mut out),
        Command::Constants => commands::constants(&cfg, &mut out),
        Command::Simulate => commands::simulate(&cfg, &mut out),
        Command::Clt => commands::clt(&cfg, &mut out),
        Command::Ehh => commands::ehh(&cfg, &mut out),
        Command::Validate => commands::validate(&cfg, &mut out),
    })??;
    let mut outputs = out.written().to_vec();
    outputs.push("manifest.json".into());
    out.json(
        "manifest.json",
        &json!({
            "command": command.name(),
            "config": cfg,
            "alpha": info.alpha,
            "psi_prime_alpha": info.psi_prime_alpha,
            "versions": { "splitree": splitree::VERSION, "splitree-cli": env!("CARGO_PKG_VERSION") },
            "seed": cfg.seed,
            "outputs": outputs,
            "wall_clock_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
