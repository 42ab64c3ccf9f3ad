use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An adaptedness or interface contract was broken at run time.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// The regression design matrix was singular or too ill-conditioned.
    #[error("degenerate regression design (condition number {condition:.3e})")]
    DegenerateRegression { condition: f64 },

    /// A config file could not be parsed; `line` is 1-based.
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Bad command line usage.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
