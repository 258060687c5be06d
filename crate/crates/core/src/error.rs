use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("insufficient data for {what}: {reason}")]
    InsufficientData { what: &'static str, reason: String },

    #[error("participant `{0}` has constant raw levels; z-score binarization is undefined")]
    DegenerateParticipant(String),

    #[error("sample rate {actual} Hz is too low; at least {required} Hz is required")]
    SampleRateTooLow { required: f64, actual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance of component {component} is not positive definite after regularization")]
    SingularCovariance { component: usize },

    #[error("layer {layer}: shape mismatch ({reason})")]
    LayerShape { layer: String, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
