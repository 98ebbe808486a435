use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("value is not recorded on the tape")]
    NotRecorded,

    #[error("solver exceeded {0} steps (likely stiffness)")]
    MaxSteps(usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("linear algebra failure: {0}")]
    Singular(String),

    #[error("simulation exceeded the duration guard of {days} days (D = {damage})")]
    DurationGuard { days: f64, damage: f64 },

    #[error("trajectory too short: {len} records, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
