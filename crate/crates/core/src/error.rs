use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("too many malformed rows: {bad} of {total} (first: {first})")]
    TooManyBadRows {
        bad: usize,
        total: usize,
        first: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("labels are all one class; logistic fit is undefined")]
    DegenerateLabels,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: msg.into(),
        }
    }
}
