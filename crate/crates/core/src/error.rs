//! Error type shared by all laboratory modules.

use thiserror::Error;

/// Errors reported by the laboratory's numerical routines.
///
/// Every invariant violation names the offending quantity so that a failing
/// experiment can be traced back to its input without re-running it.
#[derive(Debug, Error)]
pub enum Error {
    /// Two vectors that must live in the same space have different lengths.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two tables that must be conformable have different shapes.
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// A scalar or structural parameter is outside its admissible range.
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Spectral sampling was requested for a kernel with no shift-invariant
    /// spectral density (linear and combination kinds).
    #[error("kernel kind `{kind}` has no shift-invariant spectral density")]
    NotShiftInvariant { kind: &'static str },

    /// A world violates one of its probabilistic invariants.
    #[error("invalid world: {0}")]
    InvalidWorld(String),

    /// A subset partition violates one of its invariants.
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// A class's caption subset contains no captions.
    #[error("caption subset for class {class} is empty")]
    EmptySubset { class: usize },

    /// A conditional mass that a KL term divides by vanished.
    #[error("zero conditional mass at (x={x}, class={class}); KL term undefined")]
    ZeroConditionalMass { x: usize, class: usize },

    /// The joint distribution has a zero cell, so its PMI is undefined.
    #[error("joint probability is zero at (x={x}, y={y}); PMI needs full support")]
    ZeroJointEntry { x: usize, y: usize },

    /// A similarity table or classifier holds a NaN or infinity.
    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    /// An iterative solver exhausted its budget above tolerance.
    #[error("no convergence after {iters} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iters: usize, grad_norm: f64 },

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at optimization step {step}")]
    NonFiniteLoss { step: usize },

    /// An operation needed random-feature parameters but none were supplied.
    #[error("random feature parameters required but not provided")]
    MissingRffParams,
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
