//! Reverse-mode automatic differentiation.
//!
//! [`Tape`] records scalar operations on [`Var`]s; [`Tape::backward`] returns
//! the adjoint of every recorded node. The [`Scalar`] trait lets the circuit
//! equations run unchanged on `f64` or on `Var`.

mod checkpoint;
mod ops;
mod scalar;
mod surrogate;
mod tape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{checkpointed_gradient, SegmentOutput, SegmentedGradient};
pub use ops::round_half_away;
pub use scalar::Scalar;
pub use surrogate::{spike_surrogate, ste_round, SurrogateKind};
pub use tape::{Gradients, OpKind, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("variable belongs to a different tape")]
    ForeignTape,
    #[error("output variable is not recorded on this tape")]
    OutputNotOnTape,
    #[error("{parents} parents but {partials} partial derivatives")]
    ArityMismatch { parents: usize, partials: usize },
    #[error("surrogate width and slope must be positive and finite (width {width}, slope {slope})")]
    InvalidSurrogate { width: f64, slope: f64 },
}

/// Shape of the pseudo-derivative used for the spike step function.
///
/// `width` is in amperes (boxcar support), `slope` in 1/A (fast sigmoid).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub width: f64,
    pub slope: f64,
    /// Replace the forward step by the surrogate's own cumulative function,
    /// making the whole simulation smooth. Used to check gradients against
    /// finite differences; never for inference.
    #[serde(default)]
    pub smooth_forward: bool,
    /// Stop gradients through the post-spike reset and adaptation pulse, so
    /// each inter-spike interval contributes independently.
    #[serde(default)]
    pub detach_reset: bool,
}
