mod args;
mod commands;
mod error;
mod io;
mod scenario;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Detect(a) => commands::detect::run(a),
        Command::Diagnose(a) => commands::diagnose::run(a),
        Command::Baseline(a) => commands::baseline::run(a),
        Command::Report(a) => commands::report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
