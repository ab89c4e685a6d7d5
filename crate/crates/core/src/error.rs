use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A network or environment was configured inconsistently (dimension
    /// mismatch, invalid sizes, out-of-range hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (bad agent id, empty key
    /// set, misaligned shapes, out-of-range action).
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN input, nonpositive standard deviation and similar.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The exact oracle refuses instances above its state-space guard.
    #[error("state space too large: {states} joint states exceeds limit {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("plot: {0}")]
    Plot(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
