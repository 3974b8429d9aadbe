use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input to an operation.
    #[error("input error: {0}")]
    Input(String),

    /// A configuration that cannot be run (bad hyperparameters, missing files, non-ergodic chain).
    #[error("configuration error: {0}")]
    Config(String),

    /// The induced Markov chain is not irreducible and aperiodic.
    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),

    /// A learned parameter blew up.
    #[error("divergence in {what} at iteration {iteration}: {detail}")]
    Divergence {
        what: String,
        iteration: usize,
        detail: String,
    },

    /// A structural assumption on features or the chain does not hold.
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// Instance exceeds an enumeration guard.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// Logged data inconsistent with the behavior policy.
    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
