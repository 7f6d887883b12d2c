use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use walkscope_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
