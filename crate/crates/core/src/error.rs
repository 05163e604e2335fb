use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at step {step}: {what}")]
    Dimension { step: usize, what: String },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error(
        "maximum likelihood did not converge at step {step} after {iterations} iterations \
         (gradient sup-norm {gradient_norm:.3e})"
    )]
    NonConvergence {
        step: usize,
        iterations: usize,
        gradient_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("non-finite regression target at step {step}, sample {index}")]
    NonFiniteTarget { step: usize, index: usize },

    #[error("matrix is not positive definite even after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("posterior variance radicand {value:e} is below -1e-8")]
    NegativeRadicand { value: f64 },

    #[error("no grid constant reached violation rate <= {delta}: {curve:?}")]
    CalibrationFailed { delta: f64, curve: Vec<(f64, f64)> },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
