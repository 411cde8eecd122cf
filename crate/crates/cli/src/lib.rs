//! Library side of the `hournas` command-line tool: configuration loading,
//! the five commands and their output files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Artifacts, Command};
pub use config::{Loaded, Overrides, RunConfig};
pub use error::CliError;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "HOURNAS_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`], if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}
