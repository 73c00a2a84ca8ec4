use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed or out-of-range user input (bad symbols, rank < 2, file syntax).
    #[error("input error: {0}")]
    Input(String),

    /// A documented precondition of an operation was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The endomorphism (or graph map) is not injective; `witness` names the collapse.
    #[error("map is not injective: {witness}")]
    NotInjective { witness: String },

    #[error("invariance error: {0}")]
    Invariance(String),

    #[error("move not applicable: {0}")]
    Move(String),

    #[error("numeric error: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    #[error("format error: {0}")]
    Format(String),

    /// An internal consistency check failed. Always a bug.
    #[error("internal assertion failed: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) | Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}
