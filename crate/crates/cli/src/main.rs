//! `influx` batch command line.

mod args;
mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::Resolver;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "influx", version, about = "Opinion-revision model fitting, prediction and unpredictability pipelines")]
pub struct Cli {
    /// key=value settings file; flags and INFLUX_* variables take precedence.
    #[arg(long, global = true, env = "INFLUX_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "INFLUX_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: commands::Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_cli(cli: Cli) -> Result<(), CliError> {
    let res = Resolver::load(cli.config.as_deref())?;
    let jobs = match cli.jobs {
        Some(j) => Some(j),
        None => res.peek::<usize>("jobs")?,
    };
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    commands::dispatch(cli.command, res)
}
