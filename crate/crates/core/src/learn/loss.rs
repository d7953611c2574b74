use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::autodiff::Scalar;

/// Training objective on spike counts. Counts are sums of the spike
/// outputs, so they carry the surrogate gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// `(count/duration − target)²` with the target in Hz.
    RateTarget { target_hz: f64 },
    /// `softplus(margin − (c_label − c_other))` summed over the other classes.
    ClassMargin { margin: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<(), LearnError> {
        let v = match *self {
            LossSpec::RateTarget { target_hz } => target_hz,
            LossSpec::ClassMargin { margin } => margin,
        };
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(LearnError::Config(format!("loss target {v} must be finite and >= 0")))
        }
    }
}

pub fn rate_target_loss<S: Scalar>(count: S, duration: f64, target_hz: f64) -> S {
    let err = count / duration - target_hz;
    err * err
}

pub fn class_margin_loss<S: Scalar>(counts: &[S], label: usize, margin: f64) -> S {
    let mut total = S::from_f64(0.0);
    for (i, &c) in counts.iter().enumerate() {
        if i != label {
            total = total + (c - counts[label] + margin).softplus();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn rate_loss_zero_at_target() {
        assert_eq!(rate_target_loss(50.0, 20.0, 2.5), 0.0);
        assert_eq!(rate_target_loss(60.0, 20.0, 2.5), 0.25);
    }

    #[test]
    fn margin_loss_direction() {
        let tape = Tape::new();
        let c = [tape.var(3.0), tape.var(5.0)];
        let l = class_margin_loss(&c, 0, 2.0);
        assert!((l.value() - (4.0f64.exp() + 1.0).ln()).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(&c[0]) < 0.0 && g.wrt(&c[1]) > 0.0);
        assert!(class_margin_loss(&[20.0, 0.0], 0, 2.0) < 1e-7);
    }

    #[test]
    fn validation() {
        assert!(LossSpec::RateTarget { target_hz: -1.0 }.validate().is_err());
        assert!(LossSpec::ClassMargin { margin: 3.0 }.validate().is_ok());
        let s: LossSpec = toml::from_str("kind = \"rate_target\"\ntarget_hz = 2.5").unwrap();
        assert_eq!(s, LossSpec::RateTarget { target_hz: 2.5 });
    }
}
