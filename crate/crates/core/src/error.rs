use thiserror::Error;

/// Errors reported by this crate.
#[derive(Debug, Error)]
pub enum CtError {
    /// A constructor or operation received a structurally invalid argument
    /// (bad shape, empty grid, out-of-range parameter, non-finite value).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two fields that must live on the same grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A pointwise operation was asked to combine fields whose unit or kind
    /// tags make no physical sense together.
    #[error("unit mismatch: {0}")]
    UnitMismatch(String),

    /// The iterative solver produced a non-finite or exploding iterate.
    #[error("solver diverged at stage {stage}: {reason}")]
    SolverDiverged { stage: usize, reason: String },

    /// File I/O or header parsing failed.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CtError {
    fn from(e: std::io::Error) -> Self {
        CtError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CtError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CtError {
    CtError::InvalidArgument(msg.into())
}
