use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate depth: z = {z} mm is not beyond z_min = {z_min} mm")]
    DegenerateDepth { z: f64, z_min: f64 },

    #[error("inverse distortion did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {field}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("unsupported format version {found:?} (supported: {supported})")]
    Version { found: String, supported: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
