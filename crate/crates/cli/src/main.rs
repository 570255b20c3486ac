//! `mplab`: runs message-passing experiments from JSON configs and writes
//! CSV/JSON artifacts into the output directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config error: {0}")]
    Config(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error(transparent)]
    Core(#[from] mplab_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use mplab_core::Error as E;
        match self {
            CliError::Io { .. } | CliError::Config(_) => 2,
            CliError::Core(E::InvalidArgument(_) | E::Dimension(_) | E::Parse { .. } | E::Json(_)) => 2,
            CliError::Core(E::Step { source, .. }) if matches!(**source, E::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mplab", version, about = "Linear message-passing experiments")]
struct Cli {
    /// JSON config for the subcommand; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed (or seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Suppress the stdout summary.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Spectral filter coefficients (filters.csv).
    Filters,
    /// Metric traces under repeated steps (decay.csv).
    Decay,
    /// Shared-component amplification ratios (sca.json).
    Sca,
    /// Multi-relational split (relations.csv, independence.json).
    Split,
    /// LMGC injectivity and independence probes (probe.json).
    LmgcProbe,
    /// PPRGNN forward output (h.csv) and optional gradient check (gradcheck.csv).
    Pprgnn,
    /// Four-node synthetic task (train.csv, summary.json).
    TrainSynthetic,
    /// Universality fit of a random target (train.csv, summary.json).
    FitTarget,
}

pub struct Ctx {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Ctx {
    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|source| CliError::Io { path: self.out.clone(), source })?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Filters => commands::filters(&ctx),
        Command::Decay => commands::decay(&ctx),
        Command::Sca => commands::sca(&ctx),
        Command::Split => commands::split(&ctx),
        Command::LmgcProbe => commands::lmgc_probe(&ctx),
        Command::Pprgnn => commands::pprgnn(&ctx),
        Command::TrainSynthetic => commands::train_synthetic(&ctx),
        Command::FitTarget => commands::fit_target(&ctx),
    };
    match result {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mplab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
