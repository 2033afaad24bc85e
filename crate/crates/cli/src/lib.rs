//! Command-line front end: subcommands that read and write the artifacts
//! of the clone-commons pipeline.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod svg;

use std::io::Write;

use clap::Parser;
use serde_json::Value;

use args::{Cli, Command};
use error::{read_input, CliError, CliResult};

pub const THREADS_ENV: &str = "CLONE_COMMONS_THREADS";

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool may already exist when `run` is called more than once in a process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn config_section(cli: &Cli) -> CliResult<Option<Value>> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let v: Value = serde_json::from_slice(&read_input(path)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    match v {
        Value::Object(mut m) => Ok(m.remove(cli.command.name())),
        _ => Err(CliError::validation(format!("{} must hold a JSON object", path.display()))),
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    configure_threads()?;
    let section = config_section(cli)?;
    let c = section.as_ref();
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a, c, out),
        Command::Metrics(a) => commands::metrics(a, c, out),
        Command::Fit(a) => commands::fit(a, c, out),
        Command::Diagnose(a) => commands::diagnose(a, c, out),
        Command::Loo(a) => commands::loo(a, c, out),
        Command::Predict(a) => commands::predict(a, c, out),
        Command::Ocam(a) => commands::ocam(a, c, out),
        Command::Report(a) => commands::report(a, c, out),
        Command::Simulate(a) => commands::simulate(a, c, out),
    }
}

/// Runs one command line and returns its exit status.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
