use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is invalid. `field` names the offending key.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("malformed compressed message: {0}")]
    Decode(String),

    #[error("distortion ratio undefined for a zero vector")]
    UndefinedRatio,

    #[error("cosine similarity undefined: client {client} has a zero gradient")]
    UndefinedSimilarity { client: usize },

    #[error("client index {index} out of range for {clients} clients")]
    ClientIndex { index: usize, clients: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("objective became non-finite at round {round}")]
    Divergence { round: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by invalid user input rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Dimension { .. } | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
