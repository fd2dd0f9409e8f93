//! File formats, run configuration, reports and the `psno` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use error::CliError;
