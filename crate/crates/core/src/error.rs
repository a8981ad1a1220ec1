use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e} below -{threshold:e}")]
    NotPsd { min_eigenvalue: f64, threshold: f64 },

    #[error("{what} at stage {stage} is not positive definite")]
    NotPositiveDefinite { what: &'static str, stage: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("gradient block is not positive semidefinite: min eigenvalue {min_eigenvalue:e} below -{threshold:e}")]
    NotPsdGradient { min_eigenvalue: f64, threshold: f64 },

    #[error("bisection did not terminate after {iterations} iterations, bracket [{lo:e}, {hi:e}]")]
    BisectionCap { iterations: usize, lo: f64, hi: f64 },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
