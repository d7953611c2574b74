//! Current-mode DPI synapse and neuron dynamics.
//!
//! All state variables are currents in amperes and never fall below the
//! dark current `I_0`. Step functions are pure `(state, params, input, dt)
//! -> state` maps, generic over [`Scalar`](crate::autodiff::Scalar) so the
//! same code serves inference and gradient computation.

mod neuron;
mod synapse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use neuron::{
    neuron_step, nmda_gate, positive_feedback, AhpParams, FeedbackParams, NeuronParams, NeuronState, SynapticInput,
};
pub use synapse::{synapse_step, NmdaGate, SynapseParams, SynapseState};

use crate::autodiff::Scalar;

pub const PICO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpiError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("time step {dt} s exceeds the {what} time constant {tau} s")]
    StepTooLarge { what: &'static str, dt: f64, tau: f64 },
    #[error("non-finite {0} state; reduce the time step")]
    NonFinite(&'static str),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Chip-level transistor constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Subthreshold slope factor.
    pub kappa: f64,
    /// Thermal voltage (V).
    pub thermal_voltage: f64,
    /// Dark current `I_0` (A); floor of every current.
    pub dark_current: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants { kappa: 0.7, thermal_voltage: 0.025, dark_current: 0.5 * PICO }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), DpiError> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(DpiError::InvalidParameter { name: "kappa", reason: format!("{} not in (0, 1)", self.kappa) });
        }
        if !(self.thermal_voltage > 0.0 && self.thermal_voltage.is_finite()) {
            return Err(DpiError::InvalidParameter { name: "thermal_voltage", reason: "must be > 0".into() });
        }
        if !(self.dark_current > 0.0 && self.dark_current.is_finite()) {
            return Err(DpiError::InvalidParameter { name: "dark_current", reason: "must be > 0".into() });
        }
        Ok(())
    }

    /// DPI time constant `C·U_T / (κ·I_τ)`.
    pub fn tau<S: Scalar>(&self, capacitance: f64, i_tau: S) -> S {
        S::from_f64(capacitance * self.thermal_voltage / self.kappa) / i_tau
    }

    /// Leak current that yields time constant `tau`.
    pub fn leak_for_tau(&self, capacitance: f64, tau: f64) -> f64 {
        capacitance * self.thermal_voltage / (self.kappa * tau)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SynapseKind {
    #[serde(rename = "AMPA")]
    Ampa,
    #[serde(rename = "NMDA")]
    Nmda,
    #[serde(rename = "GABA_A")]
    GabaA,
    #[serde(rename = "GABA_B")]
    GabaB,
}

impl SynapseKind {
    pub const ALL: [SynapseKind; 4] = [SynapseKind::Ampa, SynapseKind::Nmda, SynapseKind::GabaA, SynapseKind::GabaB];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SynapseKind::Ampa => "AMPA",
            SynapseKind::Nmda => "NMDA",
            SynapseKind::GabaA => "GABA_A",
            SynapseKind::GabaB => "GABA_B",
        }
    }

    pub fn is_excitatory(self) -> bool {
        matches!(self, SynapseKind::Ampa | SynapseKind::Nmda)
    }
}

impl fmt::Display for SynapseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynapseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "AMPA" => Ok(SynapseKind::Ampa),
            "NMDA" => Ok(SynapseKind::Nmda),
            "GABA_A" | "GABAA" => Ok(SynapseKind::GabaA),
            "GABA_B" | "GABAB" => Ok(SynapseKind::GabaB),
            other => Err(format!("unknown synapse kind '{other}'")),
        }
    }
}

pub(crate) fn check_dt(dt: f64) -> Result<(), DpiError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(DpiError::InvalidTimeStep(dt))
    }
}

pub(crate) fn check_current(name: &'static str, value: f64, floor: f64) -> Result<(), DpiError> {
    if !value.is_finite() || value < floor {
        return Err(DpiError::InvalidParameter {
            name,
            reason: format!("{value:e} A is below the dark current {floor:e} A"),
        });
    }
    Ok(())
}
