mod cli;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use devimplicit::Error;

use cli::{Cli, Command, Overrides};
use config::RunConfig;

const THREADS_VAR: &str = "DEVIMPLICIT_THREADS";

/// Usage problems and missing inputs exit with 2, failures during a run with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Config(_) | Error::Json { .. } => 2,
        _ => 1,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::State(format!("thread pool: {e}")))
}

fn load(o: &Overrides) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load_or_default(o.config.as_deref())?;
    cfg.apply(o)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, Error> {
    configure_threads()?;
    match cli.command {
        Command::Fit { common } => {
            commands::cmd_fit(&load(&common)?)?;
        }
        Command::Finetune { checkpoint, common } => {
            commands::cmd_finetune(&load(&common)?, &checkpoint)?;
        }
        Command::Extract { checkpoint, output, common } => {
            commands::cmd_extract(&load(&common)?, &checkpoint, output.as_deref())?;
        }
        Command::Eval { checkpoint, reference, output, histogram, bins, common } => {
            commands::cmd_eval(
                &load(&common)?,
                &checkpoint,
                reference.as_deref(),
                output.as_deref(),
                histogram.as_deref(),
                bins,
            )?;
        }
        Command::Sweep { checkpoint, lambdas, output, parallel, common } => {
            let rows = commands::cmd_sweep(&load(&common)?, checkpoint.as_deref(), &lambdas, output.as_deref(), parallel)?;
            return Ok(rows.iter().all(|r| r.outcome.is_ok()));
        }
        Command::Noise { fraction, common } => {
            commands::cmd_noise(&load(&common)?, fraction)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
