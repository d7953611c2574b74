use serde::{Deserialize, Serialize};

use super::{AutodiffError, Scalar, SurrogateSpec, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Boxcar,
    FastSigmoid,
}

impl SurrogateSpec {
    pub fn boxcar(width: f64) -> Result<Self, AutodiffError> {
        Self::new(SurrogateKind::Boxcar, width, 1.0)
    }

    pub fn fast_sigmoid(slope: f64) -> Result<Self, AutodiffError> {
        Self::new(SurrogateKind::FastSigmoid, 1.0 / slope, slope)
    }

    pub fn new(kind: SurrogateKind, width: f64, slope: f64) -> Result<Self, AutodiffError> {
        let spec = SurrogateSpec { kind, width, slope, smooth_forward: false, detach_reset: false };
        spec.validate()?;
        Ok(spec)
    }

    /// Boxcar whose width is 10 % of the spike threshold current.
    pub fn default_for_threshold(threshold: f64) -> Self {
        SurrogateSpec {
            kind: SurrogateKind::Boxcar,
            width: 0.1 * threshold,
            slope: 1.0,
            smooth_forward: false,
            detach_reset: false,
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if !(self.width > 0.0 && self.width.is_finite()) || !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(AutodiffError::InvalidSurrogate { width: self.width, slope: self.slope });
        }
        Ok(())
    }

    /// Pseudo-derivative of H(x) used in place of the Dirac delta.
    pub fn density(&self, x: f64) -> f64 {
        match self.kind {
            SurrogateKind::Boxcar => {
                if x.abs() < 0.5 * self.width {
                    1.0 / self.width
                } else {
                    0.0
                }
            }
            SurrogateKind::FastSigmoid => {
                let d = 1.0 + self.slope * x.abs();
                self.slope / (d * d)
            }
        }
    }

    pub fn with_smooth_forward(mut self, on: bool) -> Self {
        self.smooth_forward = on;
        self
    }

    pub fn with_detached_reset(mut self, on: bool) -> Self {
        self.detach_reset = on;
        self
    }

    /// Forward value of the spike for `x = i_mem - threshold`, and its
    /// derivative as recorded on the tape.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        if !self.smooth_forward {
            return (if x >= 0.0 { 1.0 } else { 0.0 }, self.density(x));
        }
        match self.kind {
            SurrogateKind::Boxcar => ((x / self.width + 0.5).clamp(0.0, 1.0), self.density(x)),
            SurrogateKind::FastSigmoid => {
                // 0.5 + 0.5·sx/(1 + s|x|); its slope is half the density
                let d = 1.0 + self.slope * x.abs();
                (0.5 + 0.5 * self.slope * x / d, 0.5 * self.density(x))
            }
        }
    }

    /// `density(x) / density(0)`, in [0, 1].
    pub fn normalized(&self, x: f64) -> f64 {
        self.density(x) / self.density(0.0)
    }
}

/// Spike nonlinearity with a surrogate backward pass.
///
/// The forward value is exactly 0 or 1; the surrogate only shapes the
/// gradient.
pub fn spike_surrogate<'t>(i_mem: Var<'t>, threshold: Var<'t>, spec: &SurrogateSpec) -> Var<'t> {
    i_mem.spike(threshold, spec)
}

/// Rounding with a straight-through gradient.
pub fn ste_round<S: Scalar>(x: S) -> S {
    x.round_ste()
}
