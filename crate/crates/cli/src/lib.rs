//! Manifest-driven front end: scene ingestion, orchestration of the solver,
//! calibration, invariant suites and stability experiments, and provenance-
//! stamped output.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod output;
pub mod verify;

pub use commands::{run, Command, Outcome, Overrides};
pub use error::{CliError, CliResult};
