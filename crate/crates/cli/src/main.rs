use std::process::ExitCode;

use clap::Parser;
use qsm_cli::{init_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsm: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
