//! `phasewalk` command-line driver.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Backend;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while running: exit code 2.
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl From<phasewalk::Error> for CliError {
    fn from(e: phasewalk::Error) -> Self {
        use phasewalk::Error as E;
        match e {
            E::InvalidArgument(_) | E::NotInSubspace(_) | E::InconsistentTarget(_) | E::EmptyTarget => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "phasewalk", version, about = "Phase-steered quantum walks on blockade subspaces")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent instances.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Backend override; repeat for several.
    #[arg(long, global = true, value_enum)]
    pub backend: Vec<Backend>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count (and optionally list) the independent sets of a ring.
    Enumerate(commands::EnumerateArgs),
    /// Optimise a product-state schedule.
    PrepProduct(commands::PrepProductArgs),
    /// Run the peak protocol for a bracelet state.
    PrepBracelet(commands::PrepBraceletArgs),
    /// Compile a schedule to a Rydberg pulse program.
    Compile(commands::CompileArgs),
    /// Emulate a compiled program on the full atom register.
    Emulate(commands::EmulateArgs),
    /// Draw noisy shots from a schedule or program.
    Sample(commands::SampleArgs),
    /// EM reconstruction with a bootstrap interval.
    Mitigate(commands::MitigateArgs),
    /// Power-law fit of an amplification table.
    Analyze(commands::AnalyzeArgs),
    /// Coherent and incoherent orbit quenches.
    Quench(commands::QuenchArgs),
    /// Full config-driven pipeline.
    Run,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
