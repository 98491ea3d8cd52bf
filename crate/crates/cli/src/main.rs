#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::ExportFormat;
use crate::error::CliError;

/// Periodic E-inclusions: obstacle solves, verification and homogenization.
#[derive(Debug, Parser)]
#[command(name = "einc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; overrides EINC_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the obstacle problem and extract the inclusion.
    Solve,
    /// Re-check a previous solve from its artifacts.
    Verify,
    /// Effective tensors, bounds and gaps for an inclusion.
    Homogenize,
    /// Convert an artifact to another format.
    Export {
        #[arg(long)]
        artifact: PathBuf,
        /// csv, pgm or json.
        #[arg(long)]
        format: String,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("EINC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::config("EINC_THREADS", format!("expected a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            return Err(CliError::config("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    }
    let cfg = || {
        let path = cli.config.as_ref().ok_or_else(|| CliError::config("--config", "required for this command"))?;
        config::load_config(path)
    };
    match &cli.command {
        Command::Solve => {
            commands::cmd_solve(&cfg()?, &cli.out)?;
            println!("{}", cli.out.join("summary.json").display());
        }
        Command::Verify => {
            commands::cmd_verify(&cfg()?, &cli.out)?;
            println!("{}", cli.out.join("verify.json").display());
        }
        Command::Homogenize => {
            commands::cmd_homogenize(&cfg()?, &cli.out)?;
            println!("{}", cli.out.join("homogenize.json").display());
        }
        Command::Export { artifact, format } => {
            let path = commands::cmd_export(artifact, ExportFormat::parse(format)?, &cli.out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
