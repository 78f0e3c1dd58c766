//! Batch front end: CSV data and a JSON query config in, a JSON report out.

pub mod config;
pub mod error;
pub mod input;
pub mod report;
pub mod run;
pub mod suites;

pub use error::{CliError, Result};
