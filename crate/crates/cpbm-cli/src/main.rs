//! Batch pipeline for examination-bias experiments.
//!
//! One JSON config drives every stage; all randomness derives from the
//! master seed, and a manifest records the derived seeds and artifact paths
//! so any stage can be re-run in isolation.

mod config;
mod manifest;
mod pipeline;
mod report;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

/// Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub exit_code: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            exit_code: 1,
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            exit_code: 2,
        }
    }
}

impl From<cpbm::Error> for CliError {
    fn from(err: cpbm::Error) -> Self {
        let exit_code = match &err {
            cpbm::Error::Config(_) | cpbm::Error::Input(_) => 1,
            cpbm::Error::Parse { .. }
            | cpbm::Error::Data(_)
            | cpbm::Error::Format(_)
            | cpbm::Error::Io(_) => 2,
            cpbm::Error::Numeric(_) => 3,
        };
        CliError {
            message: err.to_string(),
            exit_code,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError {
            message: err.to_string(),
            exit_code: 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cpbm",
    about = "Context-dependent examination-bias estimation pipeline",
    version
)]
struct Cli {
    /// Experiment configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Force single-threaded, fully sequential execution.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for sweep cells (results are order-independent).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus, rankers, examination model, and click logs.
    Simulate,
    /// Extract interventional sets, weights, and IPS labels from the logs.
    Harvest,
    /// Fit the PBM and CPBM propensity models on the harvested data.
    Fit,
    /// Evaluate fitted models: RelError against the simulator truth plus
    /// held-out objective.
    Eval,
    /// Train IPS-weighted rankers (true/CPBM/PBM propensities) and compare
    /// AvgRank on held-out queries.
    Learn,
    /// Run a sweep over an axis and write one CSV row per (value,
    /// repetition, model family).
    Sweep {
        /// Sweep axis.
        #[arg(long, value_parser = ["n-queries", "eta", "zeta", "rank"])]
        axis: String,
    },
    /// Aggregate a sweep CSV into mean/std summary tables and plot series.
    Report {
        /// Input results CSV (defaults to the sweep output in out_dir).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version requests are successes; everything else is a
            // usage error (exit 1).
            if err.use_stderr() {
                eprint!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.exit_code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => return Err(CliError::usage("--config is required")),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    let threads = if cli.deterministic { 1 } else { cli.threads.max(1) };

    match cli.command {
        Command::Simulate => pipeline::cmd_simulate(&config),
        Command::Harvest => pipeline::cmd_harvest(&config),
        Command::Fit => pipeline::cmd_fit(&config),
        Command::Eval => pipeline::cmd_eval(&config),
        Command::Learn => pipeline::cmd_learn(&config),
        Command::Sweep { axis } => sweep::cmd_sweep(&config, &axis, threads),
        Command::Report { input } => report::cmd_report(&config, input.as_deref()),
    }
}
