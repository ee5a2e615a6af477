use std::path::Path;

use thiserror::Error;

/// Failure of a CLI job, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("simulation: {0}")]
    Simulation(String),
    /// Artifacts could not be written; treated like an unresolvable path.
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Output(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Output(_) => 2,
            Self::Simulation(_) => 3,
        }
    }
}
