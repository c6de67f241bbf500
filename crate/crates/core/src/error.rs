use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("window length {len} exceeds the cap of {cap}")]
    WindowTooLong { len: usize, cap: usize },
    #[error("weights too uneven for exact evaluation (rounding bound {bound:e})")]
    IllConditioned { bound: f64 },
    #[error("dataset has {len} observations, need at least {needed}")]
    InsufficientData { len: usize, needed: usize },
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("root finding did not converge within tolerance")]
    RootNotConverged,
    #[error("matrix rank {rank} is below the required {required}")]
    RankDeficient { rank: usize, required: usize },
    #[error("misaligned series: {0}")]
    Misaligned(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
