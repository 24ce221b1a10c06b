use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("level mismatch: {left} vs {right}")]
    LevelMismatch { left: usize, right: usize },

    #[error("dense materialization of level {level} exceeds the limit {limit}")]
    TooLarge { level: usize, limit: usize },

    #[error("invalid truncation tolerance: {0}")]
    InvalidTolerance(String),

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("invalid coefficient or load: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss of positivity in line search: (A z, z) = {0:e}")]
    LostPositivity(f64),

    #[error("malformed QTT container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
