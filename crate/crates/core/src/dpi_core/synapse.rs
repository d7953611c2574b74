use serde::{Deserialize, Serialize};

use super::{check_current, check_dt, DpiError, PhysicalConstants, SynapseKind, PICO};
use crate::autodiff::Scalar;

/// Membrane-dependent gate of the NMDA synapse.
///
/// The smooth gate is a logistic in log-current centred on `threshold`; the
/// hard gate is a step at the same point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmdaGate {
    /// Membrane current (A) at which the gate is half open.
    pub threshold: f64,
    /// Logistic slope per e-fold of membrane current.
    pub slope: f64,
    pub hard: bool,
}

impl Default for NmdaGate {
    fn default() -> Self {
        NmdaGate { threshold: 50.0 * PICO, slope: 5.0, hard: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynapseParams<S = f64> {
    pub kind: SynapseKind,
    /// Synapse capacitance (F).
    pub capacitance: f64,
    /// Leak current setting the decay time constant (A).
    pub i_tau: S,
    /// DPI filter gain current (A).
    pub i_gain: S,
    /// Base weight current (A).
    pub i_weight: S,
    /// Used by NMDA synapses only.
    pub nmda_gate: NmdaGate,
}

impl SynapseParams<f64> {
    /// Defaults loosely modelled on a DYNAP-SE core.
    pub fn default_for(kind: SynapseKind) -> Self {
        let (i_tau, i_gain, i_weight) = match kind {
            SynapseKind::Ampa => (10.0, 50.0, 100.0),
            SynapseKind::Nmda => (5.0, 50.0, 100.0),
            SynapseKind::GabaA => (10.0, 50.0, 100.0),
            SynapseKind::GabaB => (5.0, 50.0, 50.0),
        };
        SynapseParams {
            kind,
            capacitance: 2.0 * PICO,
            i_tau: i_tau * PICO,
            i_gain: i_gain * PICO,
            i_weight: i_weight * PICO,
            nmda_gate: NmdaGate::default(),
        }
    }

    pub fn validate(&self, consts: &PhysicalConstants) -> Result<(), DpiError> {
        if !(self.capacitance > 0.0 && self.capacitance.is_finite()) {
            return Err(DpiError::InvalidParameter { name: "C_syn", reason: "must be > 0".into() });
        }
        let i0 = consts.dark_current;
        check_current("I_tau_syn", self.i_tau, i0)?;
        check_current("I_g_syn", self.i_gain, i0)?;
        check_current("I_w", self.i_weight, i0)?;
        let tau = self.tau(consts);
        if !(tau.is_finite() && tau > 0.0) {
            return Err(DpiError::InvalidParameter { name: "tau_syn", reason: format!("{tau}") });
        }
        Ok(())
    }

    pub fn lift<T: Scalar>(&self) -> SynapseParams<T> {
        SynapseParams {
            kind: self.kind,
            capacitance: self.capacitance,
            i_tau: T::from_f64(self.i_tau),
            i_gain: T::from_f64(self.i_gain),
            i_weight: T::from_f64(self.i_weight),
            nmda_gate: self.nmda_gate,
        }
    }

    /// Mutable handles to every bias current, in a fixed order.
    pub fn currents_mut(&mut self) -> [&mut f64; 3] {
        [&mut self.i_tau, &mut self.i_gain, &mut self.i_weight]
    }
}

impl<S: Scalar> SynapseParams<S> {
    pub fn tau(&self, consts: &PhysicalConstants) -> S {
        consts.tau(self.capacitance, self.i_tau)
    }

    /// Steady-state current per unit of input drive, `(I_g / I_τ)·I_w`.
    pub fn amplitude(&self) -> S {
        self.i_gain / self.i_tau * self.i_weight
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynapseState<S = f64> {
    pub i_syn: S,
}

impl<S: Scalar> SynapseState<S> {
    pub fn rest(consts: &PhysicalConstants) -> Self {
        SynapseState { i_syn: S::from_f64(consts.dark_current) }
    }
}

/// Advances `τ dI/dt + I = (I_g/I_τ)·I_w·spike_in` by one step.
///
/// The input is held constant over the step, so the exponential update is
/// exact for the piecewise-constant drive. `spike_in` is the weighted count
/// of input spikes arriving in this step (each spike is a pulse of width
/// `dt`).
pub fn synapse_step<S: Scalar>(
    state: &SynapseState<S>,
    params: &SynapseParams<S>,
    spike_in: S,
    dt: f64,
    consts: &PhysicalConstants,
) -> Result<SynapseState<S>, DpiError> {
    check_dt(dt)?;
    let tau = params.tau(consts);
    if dt > tau.value() * (1.0 + 1e-9) {
        return Err(DpiError::StepTooLarge { what: "synapse", dt, tau: tau.value() });
    }
    let decay = (S::from_f64(-dt) / tau).exp();
    // A constant zero drive leaves only the decay; skipping the multiply
    // keeps idle steps cheap on the tape.
    let i_syn = if spike_in.is_constant() && spike_in.value() == 0.0 {
        state.i_syn * decay
    } else {
        let i_ss = params.amplitude() * spike_in;
        i_ss + (state.i_syn - i_ss) * decay
    };
    let i_syn = i_syn.clamp_min(consts.dark_current);
    if !i_syn.value().is_finite() {
        return Err(DpiError::NonFinite("synapse"));
    }
    Ok(SynapseState { i_syn })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn steady_state_is_fixed_point() {
        let c = consts();
        let p = SynapseParams::default_for(SynapseKind::Ampa);
        let s = SynapseState { i_syn: p.amplitude() };
        let next = synapse_step(&s, &p, 1.0, 1e-4, &c).unwrap();
        assert!((next.i_syn - s.i_syn).abs() <= 1e-12 * s.i_syn);
    }

    #[test]
    fn pure_decay_one_time_constant() {
        let c = consts();
        let mut p = SynapseParams::default_for(SynapseKind::Ampa);
        p.i_tau = c.leak_for_tau(p.capacitance, 0.010);
        assert!((p.tau(&c) - 0.010).abs() < 1e-15);
        let s = SynapseState { i_syn: 10.0 * PICO };
        let next = synapse_step(&s, &p, 0.0, 0.010, &c).unwrap();
        assert!((next.i_syn - 10.0 * PICO * (-1.0f64).exp()).abs() < 1e-18);
        assert!((next.i_syn / PICO - 3.679).abs() < 1e-3);
    }

    #[test]
    fn floor_and_errors() {
        let c = consts();
        let p = SynapseParams::default_for(SynapseKind::GabaA);
        let s = SynapseState { i_syn: c.dark_current };
        let next = synapse_step(&s, &p, 0.0, 1e-4, &c).unwrap();
        assert_eq!(next.i_syn, c.dark_current);
        assert_eq!(synapse_step(&s, &p, 0.0, 0.0, &c).unwrap_err(), DpiError::InvalidTimeStep(0.0));
        assert!(matches!(synapse_step(&s, &p, 0.0, 1.0, &c), Err(DpiError::StepTooLarge { .. })));
    }
}
