use thiserror::Error;

pub type Result<T> = std::result::Result<T, DemixError>;

#[derive(Debug, Error)]
pub enum DemixError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    /// The input violates a modelling assumption (e.g. a non-normal shift).
    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DemixError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DemixError::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DemixError::Io {
            path: path.into(),
            source,
        }
    }
}
