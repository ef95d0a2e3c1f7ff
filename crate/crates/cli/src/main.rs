use std::process::ExitCode;

use clap::Parser;
use probekit_cli::args::Cli;
use probekit_cli::{init_threads, run, ExitKind};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitKind::Validation.into()
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match init_threads().and_then(|()| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("probe: {e}");
            e.kind.into()
        }
    }
}
