//! Command-line driver for probekit.
//!
//! Each invocation runs one command. Every command writes a machine-readable
//! result (CSV, JSON or TOML) and a plain-text `.log` next to it; neither
//! carries timestamps, so identical flags give identical bytes.

pub mod args;
pub mod commands;
pub mod error;
pub mod runlog;

use args::{Cli, Command};
pub use error::{CliError, CliResult, ExitKind};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PROBEKIT_THREADS";

/// Size the global thread pool from `PROBEKIT_THREADS`, if set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::validation("startup", format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime("startup", e.to_string()))
}

pub fn run(cli: &Cli) -> CliResult<()> {
    use commands::*;
    match &cli.command {
        Command::Synth(a) => data::synth(a),
        Command::Validate(a) => model::validate(a),
        Command::Train(a) => model::train(a),
        Command::Gradcheck(a) => model::gradcheck(a),
        Command::Extract(a) => model::extract(a),
        Command::Pool(a) => analysis::pool(a),
        Command::Cca(a) => analysis::cca(a),
        Command::Mi(a) => analysis::mi(a),
        Command::Sts(a) => analysis::sts(a),
        Command::Weights(a) => reports::weights(a),
        Command::Report(a) => reports::join(a),
    }
}
