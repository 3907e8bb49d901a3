use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = adm::cli::Cli::parse();
    match adm::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
