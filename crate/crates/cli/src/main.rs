mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use planefold::error::Error;
use serde_json::Value;

use config::{Args, Command, InputError, RunConfig};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_EXHAUSTED: u8 = 4;

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("PLANEFOLD_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(InputError(format!("PLANEFOLD_THREADS must be a positive integer, got {s:?}")).into()),
        },
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<InputError>().is_some() {
        return EXIT_INPUT;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::SearchExhausted { .. }) => EXIT_EXHAUSTED,
        Some(e) if e.is_input_error() => EXIT_INPUT,
        _ => EXIT_NUMERIC,
    }
}

fn emit(config: &RunConfig, result: Value) -> Result<()> {
    let report = commands::envelope(config, result);
    commands::write_report(config, &report)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(&report)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(args: Args) -> Result<u8> {
    let threads = threads_from_env()?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let config = RunConfig::from_args(&args, threads)?;
    let result = match config.command {
        Command::Analyze => commands::analyze(&config)?,
        Command::Trace => commands::trace(&config)?,
        Command::Cycle => commands::cycle(&config)?,
        Command::Sweep => commands::sweep(&config)?,
        Command::Hyperbolize => match commands::hyperbolize_cmd(&config)? {
            Ok(v) => v,
            Err((partial, err)) => {
                emit(&config, partial)?;
                eprintln!("planefold: {err}");
                return Ok(EXIT_EXHAUSTED);
            }
        },
    };
    emit(&config, result)?;
    Ok(0)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("planefold: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
