use thiserror::Error;

/// Errors shared across the crate.
///
/// The variants map onto the CLI exit codes: configuration problems (2),
/// data problems (3), and numeric failures (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("regime space too large: {estimate} candidate regimes exceed the limit of {limit}")]
    EnumerationSize { estimate: u128, limit: u128 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code used by the command-line frontend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Dimension(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::Numeric(_) | Error::Eval(_) | Error::EnumerationSize { .. } => 4,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
