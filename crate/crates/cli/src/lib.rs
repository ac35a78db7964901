//! Experiment runner for the ouflow verification suites: JSON
//! configuration, suite orchestration and CSV/JSON reports.

pub mod builtins;
pub mod config;
mod error;
pub mod report;
mod suites;

use std::path::Path;

pub use config::{ExperimentConfig, FieldSpec, Prepared, SuiteConfig};
pub use error::CliError;
pub use report::{Check, Estimate, Summary};
pub use suites::run_prepared;

/// Validates `config` and runs it, writing artifacts into `out`. A config
/// error leaves `out` untouched.
pub fn run_experiment(config: ExperimentConfig, out: &Path) -> Result<Summary, CliError> {
    let prepared = config.prepare()?;
    run_prepared(&prepared, out)
}
