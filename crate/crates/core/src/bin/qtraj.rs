use std::process::ExitCode;

use clap::Parser;
use qtraj::cli::{execute, exit_code, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qtraj: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
