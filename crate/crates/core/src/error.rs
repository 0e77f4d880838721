//! Crate-wide error type.

use thiserror::Error;

use crate::lattice::SpaceTag;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field shape {found:?} does not match lattice {expected:?}")]
    ShapeMismatch { expected: [usize; 3], found: usize },

    #[error("field is in the wrong space (expected {expected:?})")]
    WrongSpace { expected: SpaceTag },

    #[error("non-finite field values after {op}")]
    NonFinite { op: &'static str },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("condensate cloud does not fit in the box with the required margin: {0}")]
    CloudTouchesBoundary(String),

    #[error("trajectory {trajectory} diverged at step {step}")]
    Divergence { trajectory: u64, step: usize },

    #[error("{discarded} of {total} trajectories diverged; ensemble averages would be biased")]
    TooManyDivergent { discarded: usize, total: usize },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("empty analysis domain: {0}")]
    EmptyDomain(String),

    #[error("Fock-space truncation insufficient: {0}")]
    CutoffExceeded(String),

    #[error("checkpoint rejected: {0}")]
    CheckpointMismatch(String),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
