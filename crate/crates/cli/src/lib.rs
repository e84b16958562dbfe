//! Library surface behind the `geomoe` binary: configuration schemas, the
//! command implementations, the finite-difference gradient-check suite, and
//! the two-stage toy training loop. Kept as a library so the acceptance
//! suite can drive everything in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod scene;
pub mod train;

pub use error::CliError;

/// Build identifier embedded at compile time (git describe when available).
pub const BUILD_ID: &str = env!("GEOMOE_BUILD_ID");
