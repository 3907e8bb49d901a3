use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("contrastive pooling needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("k = {k} exceeds the class pool size {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("numerical error: {what} = {value:e}")]
    NumericalError { what: &'static str, value: f64 },
    #[error("split has {available} eligible classes, episode needs {needed}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class_id} has {available} images, episode needs {needed}")]
    InsufficientImages {
        class_id: u32,
        needed: usize,
        available: usize,
    },
    #[error("invalid spec: {0}")]
    InvalidSpec(&'static str),
    #[error("inconsistent descriptor dimension: expected {expected}, got {actual}")]
    InconsistentDim { expected: usize, actual: usize },
    #[error("episode-stats standardization needs the batch context")]
    MissingContext,
    #[error("non-finite gradient")]
    NonFiniteGradient,
}
