use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: field `{field}`: {reason}")]
    InvalidModel { field: String, reason: String },

    #[error("invalid configuration: field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-positive state value {value} at row {row}, column {col}")]
    NonPositiveState { row: usize, col: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("step {step} out of range 0..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("rank-deficient design matrix: collinear column(s) {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("insufficient data{}: need at least {needed}, got {got}", fmt_step(*.step))]
    InsufficientData {
        step: Option<usize>,
        needed: usize,
        got: usize,
    },

    #[error("empty design at step {step}: no in-the-money sites")]
    EmptyDesign { step: usize },

    #[error("covariance factorization failed even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("Gaussian process limited to {cap} unique sites, got {got}")]
    TooManySites { cap: usize, got: usize },

    #[error("no fitted emulator for step {step}")]
    MissingFit { step: usize },

    #[error("{0}")]
    Precondition(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

fn fmt_step(step: Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

impl Error {
    pub fn model(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidModel {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn dims(context: &str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            got,
        }
    }
}
