use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::ops::{logistic_f64, round_half_away, softplus_f64};
use super::{SurrogateSpec, Var};

/// Numeric type the circuit equations are written against: plain `f64` for
/// inference and Monte-Carlo runs, [`Var`] when gradients are needed.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    /// True when the value carries no gradient.
    fn is_constant(&self) -> bool;
    /// Same value with no gradient.
    fn detached(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn abs(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn clamp_min(self, floor: f64) -> Self;
    fn round_ste(self) -> Self;
    /// Heaviside step H(self - threshold); differentiable types use the
    /// surrogate density in the backward pass.
    fn spike(self, threshold: Self, spec: &SurrogateSpec) -> Self;
    /// Σ coeff_i · x_i.
    fn weighted_sum(terms: &[(Self, f64)]) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn detached(self) -> Self {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sigmoid(self) -> Self {
        logistic_f64(self)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn clamp_min(self, floor: f64) -> Self {
        if self >= floor {
            self
        } else {
            floor
        }
    }
    fn round_ste(self) -> Self {
        round_half_away(self)
    }
    fn spike(self, threshold: Self, spec: &SurrogateSpec) -> Self {
        spec.forward(self - threshold).0
    }
    fn weighted_sum(terms: &[(Self, f64)]) -> Self {
        terms.iter().map(|(v, c)| v * c).sum()
    }
}

impl<'t> Scalar for Var<'t> {
    fn from_f64(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn is_constant(&self) -> bool {
        self.node.is_none()
    }
    fn detached(self) -> Self {
        Var::constant(self.value)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn powf(self, p: f64) -> Self {
        Var::powf(self, p)
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn softplus(self) -> Self {
        Var::softplus(self)
    }
    fn clamp_min(self, floor: f64) -> Self {
        Var::clamp_min(self, floor)
    }
    fn round_ste(self) -> Self {
        Var::round_ste(self)
    }
    fn spike(self, threshold: Self, spec: &SurrogateSpec) -> Self {
        Var::spike(self, threshold, spec)
    }
    fn weighted_sum(terms: &[(Self, f64)]) -> Self {
        Var::weighted_sum(terms)
    }
}
