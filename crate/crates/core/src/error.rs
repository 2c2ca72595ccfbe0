use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("Fock truncation failure at n_cutoff = {n_cutoff}: tail population {tail:.3e}")]
    Truncation { n_cutoff: usize, tail: f64 },

    #[error("memory guard: superoperator of dimension {dim} exceeds the configured limit {limit}")]
    MemoryLimit { dim: usize, limit: usize },

    #[error("singular or ill-conditioned linear system: {0}")]
    Singular(String),

    #[error("integration instability: {0}")]
    Instability(String),

    #[error("state norm underflow: {0}")]
    NormUnderflow(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("record/params incompatibility: {0}")]
    Incompatible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
