use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or scenario parameter is outside its domain.
    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("correlation matrix is not positive semi-definite: eigenvalue {index} is {eigenvalue:.3e}")]
    NotPsd { index: usize, eigenvalue: f64 },

    /// The likelihood has no interior maximum (every observation is zero).
    #[error("degenerate fit: all {n_obs} observations are zero, rate is unidentified")]
    DegenerateFit { n_obs: f64 },

    #[error("inference undefined: {0}")]
    Inference(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error at row {row}, column '{column}': {message}")]
    Validation {
        row: u64,
        column: String,
        message: String,
    },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("replication {rep}: {source}")]
    Replication {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
