//! `degenlab`: batch experiments for degenerate parabolic problems.
//!
//! Exit status: 0 success, 1 usage or input error, 2 invariant or
//! inequality violation, 3 convergence failure.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

use commands::Command;
use config::{ExperimentConfig, Overrides};

const EXIT_USAGE: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "degenlab",
    version,
    about = "Batch experiments for one-dimensional degenerate parabolic problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file with experiment parameters; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory receiving `<subcommand>.json` and `<subcommand>.csv`.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,

    #[command(flatten)]
    overrides: Overrides,
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<degenlab::Error>() {
        Some(degenlab::Error::Convergence { .. }) => EXIT_CONVERGENCE,
        _ => EXIT_USAGE,
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    cfg.apply(&cli.overrides)?;
    cfg.validate()?;
    let name = cli.command.name();
    let start = Instant::now();
    let outcome = cli.command.run(&cfg)?;
    let written = output::write(&cli.out, name, &cfg, &outcome, start.elapsed())?;
    println!(
        "{name}: wrote {} and {}",
        written.json.display(),
        written.csv.display()
    );
    if outcome.violations.is_empty() {
        Ok(0)
    } else {
        for v in &outcome.violations {
            eprintln!("{name}: violation: {v}");
        }
        Ok(EXIT_VIOLATION)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
