//! Error and result types shared by every module in this crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed a parameter outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two collections that must line up (layers vs. gradients, etc.) do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Gradient data contained NaN or infinite values.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    /// A numeric routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The planner could not find any assignment within the error budget.
    #[error("no feasible assignment: {0}")]
    Infeasible(String),

    /// The timing regression design matrix is rank deficient.
    #[error("rank-deficient timing fit; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    /// Not enough data to run the requested estimation.
    #[error("insufficient samples: need {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// A binary trace or checkpoint file did not match its format.
    #[error("malformed {format} file at byte {offset}: {reason}")]
    MalformedFile {
        format: &'static str,
        offset: u64,
        reason: String,
    },

    /// The simulated training loss became NaN or infinite.
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
