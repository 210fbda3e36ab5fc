use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("frame does not span the parameter space (rank {rank} < {dim}, reconstruction residual {residual:e})")]
    RankDeficient { rank: usize, dim: usize, residual: f64 },

    #[error("quadrature grid too coarse: bandwidth {bandwidth} < 5 x spacing {spacing}")]
    Resolution { bandwidth: f64, spacing: f64 },

    #[error("non-finite particle state at step {step}")]
    NonFinite { step: usize },

    #[error("features not cached on ensemble")]
    MissingFeatures,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
