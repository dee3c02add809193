//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A caller-supplied argument violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed input data (CSV rows, categorical values, wire records).
    #[error("data error: {0}")]
    Data(String),

    /// A client id outside the configured population.
    #[error("unknown client id {id} (population size {population})")]
    UnknownClient { id: usize, population: usize },

    /// An update payload of the wrong variant reached an aggregation rule.
    #[error("payload mismatch: {0}")]
    PayloadMismatch(String),

    /// A stale update reached the synchronous aggregation barrier.
    #[error("stale update in synchronous mode: client {client} trained from round {base_round}, current round {round}")]
    StaleSyncUpdate {
        client: usize,
        base_round: u64,
        round: u64,
    },

    /// A runtime protocol invariant failed; carries round context.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Configuration file or flag problems.
    #[error("config error: {0}")]
    Config(String),

    /// I/O failure, annotated with the offending path.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// I/O error annotated with the path that failed.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
