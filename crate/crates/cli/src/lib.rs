//! Scenario-driven front end for the `mrplift` library: reads a JSON
//! scenario, runs the job and writes trace, report, metadata and plot
//! files.

pub mod error;
pub mod jobs;
pub mod scenario;
pub mod trace;

use std::path::Path;

pub use error::CliError;
pub use jobs::{run_scenario, Check, RunOptions, RunOutcome};
pub use scenario::{Diagnostic, Kind, Scenario, SCHEMA_VERSION};

/// Reads and parses a scenario file; unreadable or malformed files are
/// config errors.
pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Directory that relative paths inside a scenario file refer to.
pub fn base_dir(config: &Path) -> &Path {
    match config.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}
