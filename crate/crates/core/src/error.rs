use thiserror::Error;

/// Errors raised by the tensor kernels, the inference engine and the file
/// formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode {mode} for an order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },

    #[error("tensor order {0} is below 3")]
    OrderTooLow(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("transform matrix for mode {mode} is numerically singular (reciprocal condition {rcond:e})")]
    SingularTransform { mode: usize, rcond: f64 },

    #[error("transform matrix for mode {mode} is not a scaled unitary matrix")]
    NotScaledUnitary { mode: usize },

    #[error("imaginary residue {relative:e} exceeds the tolerance {tolerance:e}")]
    ImaginaryResidue { relative: f64, tolerance: f64 },

    #[error("rank {rank} exceeds min(I1, I2) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("npy: {0}")]
    Npy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
