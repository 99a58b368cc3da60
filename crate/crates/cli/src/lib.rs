//! Command-line driver for the `bingham` solver: JSON configurations with
//! expression-valued data, study drivers and artifact output.

pub mod config;
pub mod error;
pub mod expr;
pub mod run;

pub use config::{Mode, RunConfig};
pub use error::CliError;
pub use run::{run_config, Outcome};

/// Exit status for a run that finished but did not converge or failed a check.
pub const EXIT_NONCONVERGENCE: i32 = 2;
/// Exit status for configuration, invariant and I/O errors.
pub const EXIT_ERROR: i32 = 1;
