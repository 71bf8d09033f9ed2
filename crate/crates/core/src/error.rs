use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the allocation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a mathematical function.
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    /// A scenario configuration violates one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Tensor or vector dimensions do not match the configuration.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The dispersion linearization was requested at an all-zero power point.
    #[error("dispersion gradient undefined: channel dispersion sums to zero at the expansion point")]
    ZeroDispersion,

    /// A requested feature combination is not supported by the solver.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The exhaustive oracle refused an instance that is too large.
    #[error("instance too large for exhaustive search: estimated {estimated} evaluations, limit {limit}")]
    TooLarge { estimated: f64, limit: f64 },

    /// An input table was empty where rows are required.
    #[error("empty table")]
    EmptyTable,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// The conic backend rejected its input or settings.
    #[error("solver setup failed: {0}")]
    Solver(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
