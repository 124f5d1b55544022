use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input, inconsistent model files.
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Numerical(String),

    #[error("alarm fraction {fraction:.4} exceeds the threshold {threshold}")]
    Threshold { fraction: f64, threshold: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Numerical(_) => ExitCode::from(3),
            CliError::Threshold { .. } => ExitCode::from(4),
        }
    }
}

impl From<rdvdl_core::Error> for CliError {
    fn from(e: rdvdl_core::Error) -> Self {
        use rdvdl_core::Error as E;
        match e {
            E::Numerical(_) | E::Invariant(_) | E::Degenerate(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the offending path to I/O errors.
pub fn with_path<T>(r: std::io::Result<T>, path: &std::path::Path) -> CliResult<T> {
    r.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
