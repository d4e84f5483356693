use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A model invariant does not hold.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A pair of states violates an edge-level invariant.
    #[error("validation failed on pair ({from}, {to}): {reason}")]
    PairValidation {
        from: String,
        to: String,
        reason: String,
    },

    /// The chain has a closed proper subset of states.
    #[error("rate matrix is reducible; closed subset {closed:?}")]
    Reducible { closed: Vec<usize> },

    /// An input file does not match the expected schema.
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    /// Model data that should satisfy an identity does not.
    #[error("model inconsistency: {0}")]
    Inconsistent(String),

    /// A numerical routine failed (non-finite values, blow-up, underflow).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A caller-supplied argument is out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Validation(_)
            | Error::PairValidation { .. }
            | Error::Reducible { .. }
            | Error::Schema { .. }
            | Error::Inconsistent(_)
            | Error::InvalidArgument(_) => 1,
            Error::Numerical(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
