use std::process::ExitCode;

use clap::Parser;
use wayfinder_cli::{error_summary, print_summary, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            print_summary(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            print_summary(&error_summary(&e));
            ExitCode::from(e.exit_code())
        }
    }
}
