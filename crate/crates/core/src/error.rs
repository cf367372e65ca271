use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the identification / interpolation / control pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid arm model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: validation error: {msg}")]
    Validation {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("recording '{label}' has {frames} frames, shorter than window {window}")]
    RecordingTooShort {
        label: String,
        frames: usize,
        window: usize,
    },

    #[error("calibration point '{label}' unreachable: residual {residual:.3e}")]
    Unreachable { label: String, residual: f64 },

    #[error("node '{label}': {source}")]
    Node {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero-variance input")]
    ZeroVariance,

    #[error("degenerate projection range: span {span:.3e}")]
    DegenerateRange { span: f64 },

    #[error("degenerate interpolated field: blended direction norm {norm:.3e}")]
    DegenerateField { norm: f64 },

    #[error("volume construction failed: {0}")]
    Construction(String),

    #[error("stream error: timestamp {t} not after {prev}")]
    OutOfOrder { t: f64, prev: f64 },

    #[error("learning-curve fit failed: {0}")]
    FitFailure(String),

    #[error("unknown report format '{0}'")]
    UnknownFormat(String),

    #[error("schema mismatch: expected '{expected}', found '{found}'")]
    Schema { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wrap an error with the label of the calibration node it concerns.
    pub fn at_node(self, label: impl Into<String>) -> Self {
        Error::Node {
            label: label.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
