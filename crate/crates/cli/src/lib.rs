//! Command-line front end: NIfTI-1 and PGM IO, JSON configs, and the `qsm` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod nifti;
pub mod pgm;

pub use commands::{run, Cli};
pub use error::{CliError, Result};

/// Sizes the global thread pool from `QSM_THREADS` (unset or 0 = one thread per core).
pub fn init_threads() -> Result<()> {
    let threads = match std::env::var("QSM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("QSM_THREADS must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    // A pool that already exists (e.g. in tests) is fine to keep.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}
