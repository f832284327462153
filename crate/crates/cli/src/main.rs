//! `pdsim`: runs security games, adapter checks, benchmarks and dumps.
//!
//! Exit status is 0 when the run passes, 1 when a checked property fails
//! (or the run errors out), and 2 for usage errors.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, FileConfig};
use commands::CliError;

fn load_config(cli: &Cli) -> Result<FileConfig, CliError> {
    let Some(path) = &cli.config else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let file = load_config(&cli)?;
    match cli.command {
        Command::Game(a) => commands::game(a.merge(file.game), file.schemes),
        Command::Bench(a) => commands::bench_cmd(a.merge(file.bench), file.schemes),
        Command::Matrix(a) => commands::matrix(a.merge(file.matrix)),
        Command::Dump(a) => commands::dump(a.merge(file.dump), file.schemes),
        Command::Woram(a) => commands::woram(a.merge(file.woram), file.schemes),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("pdsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
