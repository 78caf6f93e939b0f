#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod args;
mod commands;
mod config;
mod dates;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Globals;
use error::{CliError, CliResult};

fn run() -> CliResult<()> {
    let argv = config::expand_args(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Err(CliError::Validation(String::new()))
            } else {
                Ok(())
            };
        }
    };
    if cli.explain_defaults {
        print!("{}", commands::explain_defaults());
        return Ok(());
    }
    let g = Globals {
        out: cli
            .out
            .unwrap_or_else(|| PathBuf::from(commands::DEFAULT_OUT)),
        epoch: cli.epoch,
    };
    match cli.command {
        None => Err(CliError::Validation(
            "no subcommand given; see --help".into(),
        )),
        Some(Command::Fit(a)) => commands::run_fit(&a, &g),
        Some(Command::Reconstruct(a)) => commands::run_reconstruct(&a, &g),
        Some(Command::Simulate(a)) => commands::run_simulate(&a, &g),
        Some(Command::Sweep(a)) => commands::run_sweep(&a, &g),
        Some(Command::Agefit(a)) => commands::run_agefit(&a, &g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
