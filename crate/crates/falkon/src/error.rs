use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix not positive definite: non-positive pivot at index {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("singular triangular factor: zero diagonal at index {index}")]
    SingularTriangular { index: usize },

    #[error("iteration diverged: non-finite value at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("degenerate centers: kernel matrix has rank zero")]
    DegenerateCenters,

    #[error("model file format error: {0}")]
    ModelFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("refusing dense O(n^3) operation: n = {n} exceeds cap {cap}")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
