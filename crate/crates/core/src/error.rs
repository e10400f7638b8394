use thiserror::Error;

/// Errors raised by the model library.
#[derive(Debug, Error)]
pub enum HbtmError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing field {field} at line {line}")]
    MissingField { field: String, line: usize },

    #[error("unknown node ids: {}", .0.join(", "))]
    UnknownNodes(Vec<String>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("time {t} outside background window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },

    #[error("event {event} has zero intensity (no background mass and no admissible parent)")]
    ZeroIntensity { event: usize },

    #[error(
        "log-likelihood decreased at iteration {iteration}: {previous} -> {current}"
    )]
    LikelihoodDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("branching ratio {0} >= 1: process is not subcritical")]
    Unstable(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl HbtmError {
    /// True for failures of the numerical procedure itself rather than of its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HbtmError::LikelihoodDecrease { .. }
                | HbtmError::ZeroIntensity { .. }
                | HbtmError::Unstable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HbtmError>;
