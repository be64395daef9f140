use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A non-finite value appeared while stepping an ODE.
    #[error("integration failed at t = {time}: non-finite state")]
    IntegrationFailure { time: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("reservoir construction failed: {0}")]
    Construction(String),

    #[error("eigenvalue iteration did not converge after {iterations} iterations")]
    EigenNonConvergence { iterations: usize },

    #[error("lyapunov estimate did not converge: {0}")]
    Calibration(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported snapshot format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("snapshot validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
