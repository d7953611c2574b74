use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::{NodeRef, OpKind, Tape};
use super::Var;

fn unary<'t>(x: Var<'t>, kind: OpKind, value: f64, d: f64) -> Var<'t> {
    match x.node {
        None => Var::constant(value),
        Some(n) => {
            let id = n.tape.push(kind, &[n.id], &[d]);
            Var { value, node: Some(NodeRef { tape: n.tape, id }) }
        }
    }
}

fn binary<'t>(a: Var<'t>, b: Var<'t>, kind: OpKind, value: f64, da: f64, db: f64) -> Var<'t> {
    match (a.node, b.node) {
        (None, None) => Var::constant(value),
        (Some(n), None) => {
            let id = n.tape.push(kind, &[n.id], &[da]);
            Var { value, node: Some(NodeRef { tape: n.tape, id }) }
        }
        (None, Some(n)) => {
            let id = n.tape.push(kind, &[n.id], &[db]);
            Var { value, node: Some(NodeRef { tape: n.tape, id }) }
        }
        (Some(na), Some(nb)) => {
            assert!(std::ptr::eq(na.tape, nb.tape), "arithmetic between variables of different tapes");
            let id = na.tape.push(kind, &[na.id, nb.id], &[da, db]);
            Var { value, node: Some(NodeRef { tape: na.tape, id }) }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        binary(self, rhs, OpKind::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        binary(self, rhs, OpKind::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        binary(self, rhs, OpKind::Mul, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        binary(self, rhs, OpKind::Div, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        unary(self, OpKind::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        unary(self, OpKind::Add, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        unary(self, OpKind::Sub, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        unary(self, OpKind::Mul, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        unary(self, OpKind::Div, self.value / rhs, 1.0 / rhs)
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Rounds half away from zero (`f64::round` semantics).
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

impl<'t> Var<'t> {
    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        unary(self, OpKind::Exp, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        unary(self, OpKind::Ln, self.value.ln(), 1.0 / self.value)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let v = self.value.powf(p);
        unary(self, OpKind::Powf, v, p * self.value.powf(p - 1.0))
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        unary(self, OpKind::Sqrt, s, 0.5 / s)
    }

    /// |x| with derivative sign(x) (0 at the kink).
    pub fn abs(self) -> Var<'t> {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        unary(self, OpKind::Abs, self.value.abs(), d)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = logistic(self.value);
        unary(self, OpKind::Sigmoid, s, s * (1.0 - s))
    }

    pub fn softplus(self) -> Var<'t> {
        unary(self, OpKind::Softplus, softplus(self.value), logistic(self.value))
    }

    /// max(x, floor) with derivative 1 above the floor and 0 on it.
    pub fn clamp_min(self, floor: f64) -> Var<'t> {
        if self.value >= floor {
            self
        } else {
            unary(self, OpKind::ClampMin, floor, 0.0)
        }
    }

    /// Straight-through rounding: forward rounds half away from zero,
    /// backward passes the adjoint through unchanged.
    pub fn round_ste(self) -> Var<'t> {
        unary(self, OpKind::Round, round_half_away(self.value), 1.0)
    }

    /// Heaviside step of `self - threshold` whose backward pass uses the
    /// surrogate density of `spec`.
    pub fn spike(self, threshold: Var<'t>, spec: &super::SurrogateSpec) -> Var<'t> {
        let (value, d) = spec.forward(self.value - threshold.value);
        binary(self, threshold, OpKind::Spike, value, d, -d)
    }

    /// Σ coeff_i · x_i recorded as a single node.
    pub fn weighted_sum(terms: &[(Var<'t>, f64)]) -> Var<'t> {
        let value: f64 = terms.iter().map(|(v, c)| v.value * c).sum();
        let tape: Option<&'t Tape> = terms.iter().find_map(|(v, _)| v.node.map(|n| n.tape));
        let Some(tape) = tape else {
            return Var::constant(value);
        };
        let mut ids = Vec::with_capacity(terms.len());
        let mut ds = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            if let Some(n) = v.node {
                assert!(std::ptr::eq(n.tape, tape), "weighted sum across tapes");
                ids.push(n.id);
                ds.push(*c);
            }
        }
        let id = tape.push(OpKind::WeightedSum, &ids, &ds);
        Var { value, node: Some(NodeRef { tape, id }) }
    }
}

pub(crate) fn logistic_f64(z: f64) -> f64 {
    logistic(z)
}

pub(crate) fn softplus_f64(z: f64) -> f64 {
    softplus(z)
}
