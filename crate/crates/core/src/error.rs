use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A closed-form mirror step left the generator's domain. Callers may
    /// retry with a larger step-size matrix.
    #[error("domain exit at ({row}, {col}): bracketed base {base} is not positive")]
    DomainExit { row: usize, col: usize, base: f64 },

    #[error("no convex-concave split registered for loss `{0}`")]
    NoSplit(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("solver failed at iteration {iteration}, mode {mode}: {source}")]
    Iteration {
        iteration: usize,
        mode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("inner solve did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
