//! `evofactor` binary. Reports go to stdout (or `--output`) as JSON; any
//! failure is a JSON object on stderr and a nonzero exit status.

mod args;
mod commands;

use std::fmt::Display;
use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};

#[derive(Debug, Serialize)]
pub struct CliError {
    pub module: String,
    pub operation: String,
    pub cause: String,
}

impl CliError {
    fn new(module: &str, operation: &str, cause: impl Display) -> Self {
        Self { module: module.into(), operation: operation.into(), cause: cause.to_string() }
    }

    pub fn io(operation: &str, cause: impl Display) -> Self {
        Self::new("cli-reports", operation, cause)
    }
}

impl From<evofactor_core::Error> for CliError {
    fn from(e: evofactor_core::Error) -> Self {
        let op = e.operation();
        let operation = op.split_once('.').map_or(op, |(_, rest)| rest);
        Self::new(e.module(), operation, &e)
    }
}

fn emit_error(e: &CliError) -> ExitCode {
    let body = serde_json::json!({ "error": e });
    eprintln!("{body}");
    ExitCode::from(2)
}

fn write_report<T: Serialize>(report: &T, cli: &Cli) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::io("serialize", e))?;
    text.push('\n');
    match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io("write_report", e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::io("write_report", e)),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    cli.validate().map_err(|e| CliError::new("cli-reports", "validate", e))?;
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::new("cli-reports", "threads", e))?;
    }
    let plots = cli.plot_data.as_deref();
    match &cli.command {
        Command::Estimate(a) => write_report(&commands::estimate(a, plots)?, cli),
        Command::Test(a) => write_report(&commands::test(a, plots)?, cli),
        Command::Tune(a) => write_report(&commands::tune(a, plots)?, cli),
        Command::Simulate(a) => write_report(&commands::simulate(a)?, cli),
        Command::Predict(a) => write_report(&commands::predict(a, plots)?, cli),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let cause = e.render().to_string();
            return emit_error(&CliError::new("cli-reports", "parse_args", cause.trim()));
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => emit_error(&e),
    }
}
