use std::process::ExitCode;

use clap::Parser;
use dpi_sim::cli::{init_threads, run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    match init_threads().and_then(|()| run(&args)) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dpi-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
