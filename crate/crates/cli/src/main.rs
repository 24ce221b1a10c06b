//! `qtt-elliptic`: command-line driver.
//!
//! Exit status is 0 on success, 2 when an iteration stopped at `max_iter`
//! and 1 on any configuration or runtime error.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{expand_config, Cli, Command};
use commands::Outcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] qtt_elliptic::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Solve(a) => commands::run_solve(a),
        Command::Certify(a) => commands::run_certify(a),
        Command::Benchmark(a) => commands::run_benchmark(a),
        Command::Contraction(a) => commands::run_contraction(a),
        Command::CompareHom(a) => commands::run_compare(a),
        Command::Ranks(a) => commands::run_ranks(a),
    }
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::MaxIter) => {
            eprintln!("stopped at max_iter without meeting the tolerance");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
