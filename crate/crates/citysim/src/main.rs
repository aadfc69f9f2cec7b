use std::process::ExitCode;

use clap::Parser;

use citysim::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("citysim: error: {e}");
            ExitCode::FAILURE
        }
    }
}
