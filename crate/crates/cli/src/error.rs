use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Parse or validation failure; `message` carries the line or key.
    #[error("scenario {origin}: {message}")]
    Scenario { origin: String, message: String },

    #[error("unknown method `{0}` (expected one of offgrid, uplink_aided, sbl, dft, odft)")]
    UnknownMethod(String),

    #[error("unknown preset `{0}` (available: {list})", list = crate::presets::names().join(", "))]
    UnknownPreset(String),

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Estimation(#[from] offgrid_sbl::Error),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }
}
