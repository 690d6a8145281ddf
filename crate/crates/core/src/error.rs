use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AfrError>;

#[derive(Debug, Error)]
pub enum AfrError {
    #[error("dimension mismatch in {context}: {detail}")]
    Dimension { context: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver did not converge after {iterations} iterations (kkt residual {kkt_residual:e})")]
    Solver { iterations: usize, kkt_residual: f64 },

    #[error("svr for visual dimension {dim} failed: {source}")]
    Dimensional {
        dim: usize,
        #[source]
        source: Box<AfrError>,
    },

    #[error("training error at step {step}: {reason}")]
    Training { step: u64, reason: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl AfrError {
    /// Short stable tag for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            AfrError::Dimension { .. } => "dimension",
            AfrError::Data(_) => "data",
            AfrError::Contract(_) => "contract",
            AfrError::Solver { .. } => "solver",
            AfrError::Dimensional { .. } => "svr",
            AfrError::Training { .. } => "training",
            AfrError::Format { .. } => "format",
            AfrError::Io { .. } => "io",
            AfrError::Json { .. } => "json",
        }
    }

    pub(crate) fn dim(context: impl Into<String>, detail: impl Into<String>) -> Self {
        AfrError::Dimension {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AfrError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        AfrError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
