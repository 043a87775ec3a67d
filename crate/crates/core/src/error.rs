use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("solvability error: right-hand side has mean {mean:e}")]
    Solvability { mean: f64 },
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("numerical failure after {} iterations: {message}", trace.len())]
    NumericalFailure { message: String, trace: Vec<f64> },
    #[error("solver did not converge: {message}")]
    Solver { message: String, trace: Vec<f64> },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
