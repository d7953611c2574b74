use super::{check_current, check_dt, DpiError, NmdaGate, PhysicalConstants, PICO};
use crate::autodiff::{Scalar, SurrogateSpec};

/// After-hyperpolarization (spike-frequency adaptation) block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AhpParams<S = f64> {
    pub enabled: bool,
    pub capacitance: f64,
    pub i_tau: S,
    pub i_gain: S,
    pub i_weight: S,
    /// Width of the post-spike drive pulse; `None` means one time step.
    pub pulse_width: Option<f64>,
}

/// Positive-feedback (spike initiation) block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedbackParams<S = f64> {
    pub enabled: bool,
    /// Sigmoid steepness (1/A).
    pub alpha: f64,
    /// Centre of the sigmoid; normally equal to the neuron gain current.
    pub i_gain: S,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronParams<S = f64> {
    /// Membrane capacitance (F).
    pub capacitance: f64,
    pub i_tau: S,
    pub i_gain: S,
    pub i_dc: S,
    pub spike_threshold: S,
    pub reset_current: S,
    /// Refractory period (s).
    pub refractory: f64,
    pub ahp: AhpParams<S>,
    pub feedback: FeedbackParams<S>,
    pub surrogate: SurrogateSpec,
}

impl NeuronParams<f64> {
    /// The calibrated constant-DC setting: I_τ = 4.1 pA, I_g = 500 pA,
    /// I_dc = 36.6 pA.
    pub fn calibrated_dc(consts: &PhysicalConstants) -> Self {
        let threshold = 2000.0 * PICO;
        NeuronParams {
            capacitance: 2.0 * PICO,
            i_tau: 4.1 * PICO,
            i_gain: 500.0 * PICO,
            i_dc: 36.6 * PICO,
            spike_threshold: threshold,
            reset_current: consts.dark_current,
            refractory: 2e-3,
            ahp: AhpParams {
                enabled: true,
                capacitance: 4.0 * PICO,
                i_tau: 1.0 * PICO,
                i_gain: 10.0 * PICO,
                i_weight: 100.0 * PICO,
                pulse_width: None,
            },
            feedback: FeedbackParams { enabled: true, alpha: 1.0 / (25.0 * PICO), i_gain: 500.0 * PICO },
            surrogate: SurrogateSpec::default_for_threshold(threshold),
        }
    }

    pub fn validate(&self, consts: &PhysicalConstants) -> Result<(), DpiError> {
        let i0 = consts.dark_current;
        if !(self.capacitance > 0.0 && self.capacitance.is_finite()) {
            return Err(DpiError::InvalidParameter { name: "C_mem", reason: "must be > 0".into() });
        }
        check_current("I_tau", self.i_tau, i0)?;
        check_current("I_g", self.i_gain, i0)?;
        check_current("I_dc", self.i_dc, i0)?;
        check_current("spike_threshold", self.spike_threshold, i0)?;
        check_current("reset_current", self.reset_current, i0)?;
        if self.spike_threshold <= self.i_gain {
            return Err(DpiError::InvalidParameter {
                name: "spike_threshold",
                reason: format!("{:e} A must exceed I_g = {:e} A", self.spike_threshold, self.i_gain),
            });
        }
        if !(self.refractory >= 0.0 && self.refractory.is_finite()) {
            return Err(DpiError::InvalidParameter { name: "t_refractory", reason: "must be >= 0".into() });
        }
        if self.ahp.enabled {
            if !(self.ahp.capacitance > 0.0) {
                return Err(DpiError::InvalidParameter { name: "C_ahp", reason: "must be > 0".into() });
            }
            check_current("I_tau_ahp", self.ahp.i_tau, i0)?;
            check_current("I_g_ahp", self.ahp.i_gain, i0)?;
            check_current("I_w_ahp", self.ahp.i_weight, i0)?;
            if let Some(w) = self.ahp.pulse_width {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(DpiError::InvalidParameter { name: "ahp_pulse_width", reason: "must be > 0".into() });
                }
            }
        }
        if self.feedback.enabled {
            check_current("I_g_fb", self.feedback.i_gain, i0)?;
            if !(self.feedback.alpha >= 0.0 && self.feedback.alpha.is_finite()) {
                return Err(DpiError::InvalidParameter { name: "alpha", reason: "must be >= 0".into() });
            }
        }
        self.surrogate.validate().map_err(|e| DpiError::InvalidParameter { name: "surrogate", reason: e.to_string() })
    }

    /// Converts every current to `T` as a constant.
    pub fn lift<T: Scalar>(&self) -> NeuronParams<T> {
        let c = T::from_f64;
        NeuronParams {
            capacitance: self.capacitance,
            i_tau: c(self.i_tau),
            i_gain: c(self.i_gain),
            i_dc: c(self.i_dc),
            spike_threshold: c(self.spike_threshold),
            reset_current: c(self.reset_current),
            refractory: self.refractory,
            ahp: AhpParams {
                enabled: self.ahp.enabled,
                capacitance: self.ahp.capacitance,
                i_tau: c(self.ahp.i_tau),
                i_gain: c(self.ahp.i_gain),
                i_weight: c(self.ahp.i_weight),
                pulse_width: self.ahp.pulse_width,
            },
            feedback: FeedbackParams {
                enabled: self.feedback.enabled,
                alpha: self.feedback.alpha,
                i_gain: c(self.feedback.i_gain),
            },
            surrogate: self.surrogate,
        }
    }

    /// Mutable handles to the bias currents subject to device mismatch, in
    /// a fixed order. The reset current is a short to ground and excluded.
    pub fn currents_mut(&mut self) -> Vec<&mut f64> {
        vec![
            &mut self.i_tau,
            &mut self.i_gain,
            &mut self.i_dc,
            &mut self.spike_threshold,
            &mut self.ahp.i_tau,
            &mut self.ahp.i_gain,
            &mut self.ahp.i_weight,
            &mut self.feedback.i_gain,
        ]
    }
}

impl<S: Scalar> NeuronParams<S> {
    pub fn tau(&self, consts: &PhysicalConstants) -> S {
        consts.tau(self.capacitance, self.i_tau)
    }

    pub fn tau_ahp(&self, consts: &PhysicalConstants) -> S {
        consts.tau(self.ahp.capacitance, self.ahp.i_tau)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronState<S = f64> {
    pub i_mem: S,
    pub i_ahp: S,
    /// Remaining refractory time (s).
    pub refractory_remaining: f64,
    /// 1 if the neuron spiked during the last step, else 0.
    pub spiked: S,
    /// Remaining duration of the AHP drive pulse (s).
    pub pulse_remaining: f64,
    /// Spike value driving the AHP while the pulse is active.
    pub pulse_drive: S,
}

impl<S: Scalar> NeuronState<S> {
    pub fn rest(consts: &PhysicalConstants) -> Self {
        let i0 = S::from_f64(consts.dark_current);
        NeuronState {
            i_mem: i0,
            i_ahp: i0,
            refractory_remaining: 0.0,
            spiked: S::from_f64(0.0),
            pulse_remaining: 0.0,
            pulse_drive: S::from_f64(0.0),
        }
    }

    pub fn has_spiked(&self) -> bool {
        fired(self.spiked)
    }
}

/// Synaptic currents delivered to a neuron in one step, above the
/// dark-current floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynapticInput<S = f64> {
    pub ampa: S,
    pub nmda: S,
    pub gaba_a: S,
    pub gaba_b: S,
    pub nmda_gate: NmdaGate,
}

impl<S: Scalar> SynapticInput<S> {
    pub fn none() -> Self {
        let z = S::from_f64(0.0);
        SynapticInput { ampa: z, nmda: z, gaba_a: z, gaba_b: z, nmda_gate: NmdaGate::default() }
    }
}

/// Positive feedback current of the spike-generation block,
/// `f = I_fb/I_τ·(I_mem − I_g)` with
/// `I_fb = I_0^{1/(κ+1)}·I_mem^{κ/(κ+1)} / (1 + e^{−α(I_mem − I_g)})`.
pub fn positive_feedback<S: Scalar>(i_mem: S, params: &NeuronParams<S>, consts: &PhysicalConstants) -> S {
    feedback_current(i_mem, &params.feedback, params.i_tau, consts)
}

fn feedback_current<S: Scalar>(i_mem: S, fb: &FeedbackParams<S>, i_tau: S, consts: &PhysicalConstants) -> S {
    if !fb.enabled {
        return S::from_f64(0.0);
    }
    let k = consts.kappa;
    let prefactor = consts.dark_current.powf(1.0 / (k + 1.0));
    let delta = i_mem - fb.i_gain;
    let i_fb = i_mem.powf(k / (k + 1.0)) * prefactor * (delta * fb.alpha).sigmoid();
    i_fb / i_tau * delta
}

/// NMDA output current after the membrane-dependent gate.
pub fn nmda_gate<S: Scalar>(i_syn_nmda: S, i_mem: S, gate: &NmdaGate) -> S {
    if gate.hard {
        return if i_mem.value() >= gate.threshold { i_syn_nmda } else { S::from_f64(0.0) };
    }
    let x = (i_mem.ln() - gate.threshold.ln()) * gate.slope;
    i_syn_nmda * x.sigmoid()
}

fn fired<S: Scalar>(s: S) -> bool {
    s.value() >= 0.5
}

// Tolerance for comparing accumulated times against zero.
fn expired(remaining: f64, dt: f64) -> bool {
    remaining <= 1e-6 * dt
}

/// Advances the neuron by one step.
///
/// The membrane equation
/// `(1 + I_g/I_mem)·τ·dI_mem/dt + I_mem·(1 + I_ahp/I_τ) = I_∞ + f(I_mem)`,
/// `I_∞ = I_g/I_τ·(I_in − I_ahp − I_τ)` is integrated with explicit Euler;
/// the linear AHP filter uses the exact exponential update. GABA_B current
/// adds to the leak `I_τ` wherever it appears; GABA_A subtracts from the
/// input. Crossing the spike threshold resets `I_mem` to the reset current
/// and holds it there for the refractory period.
pub fn neuron_step<S: Scalar>(
    state: &NeuronState<S>,
    params: &NeuronParams<S>,
    input: &SynapticInput<S>,
    dt: f64,
    consts: &PhysicalConstants,
) -> Result<NeuronState<S>, DpiError> {
    check_dt(dt)?;
    let i0 = consts.dark_current;
    let zero = S::from_f64(0.0);
    let one = S::from_f64(1.0);

    let (i_mem, spiked, refractory_remaining) = if !expired(state.refractory_remaining, dt) {
        (params.reset_current, zero, (state.refractory_remaining - dt).max(0.0))
    } else {
        let i_tau = if input.gaba_b.is_constant() && input.gaba_b.value() == 0.0 {
            params.i_tau
        } else {
            params.i_tau + input.gaba_b
        };
        let excit = params.i_dc + input.ampa + nmda_gate(input.nmda, state.i_mem, &input.nmda_gate);
        let i_in = (excit - input.gaba_a).clamp_min(i0);
        let tau = consts.tau(params.capacitance, i_tau);
        let i_inf = params.i_gain / i_tau * (i_in - state.i_ahp - i_tau);
        let fb = feedback_current(state.i_mem, &params.feedback, i_tau, consts);
        let leak = state.i_mem * (one + state.i_ahp / i_tau);
        let rate = (i_inf + fb - leak) / (tau * (one + params.i_gain / state.i_mem));
        let i_next = (state.i_mem + rate * dt).clamp_min(i0);
        if !i_next.value().is_finite() {
            return Err(DpiError::NonFinite("membrane"));
        }
        let s = i_next.spike(params.spike_threshold, &params.surrogate);
        // s is exactly 0 or 1 unless the smooth forward mode is on; even a
        // zero s carries the surrogate gradient
        let s_reset = if params.surrogate.detach_reset { s.detached() } else { s };
        let i_mem = i_next * (one - s_reset) + params.reset_current * s_reset;
        (i_mem, s, if fired(s) { params.refractory } else { 0.0 })
    };

    let (i_ahp, pulse_remaining, pulse_drive) = if params.ahp.enabled {
        let active = !expired(state.pulse_remaining, dt);
        let tau_ahp = consts.tau(params.ahp.capacitance, params.ahp.i_tau);
        let decay = (S::from_f64(-dt) / tau_ahp).exp();
        let i_ahp = if active {
            let drive = params.ahp.i_gain / params.ahp.i_tau * params.ahp.i_weight * state.pulse_drive;
            drive + (state.i_ahp - drive) * decay
        } else {
            state.i_ahp * decay
        }
        .clamp_min(i0);
        if fired(spiked) {
            let drive = if params.surrogate.detach_reset { spiked.detached() } else { spiked };
            (i_ahp, params.ahp.pulse_width.unwrap_or(dt), drive)
        } else {
            let remaining = (state.pulse_remaining - dt).max(0.0);
            (i_ahp, remaining, if expired(remaining, dt) { zero } else { state.pulse_drive })
        }
    } else {
        (state.i_ahp, 0.0, zero)
    };
    if !i_ahp.value().is_finite() {
        return Err(DpiError::NonFinite("AHP"));
    }

    Ok(NeuronState { i_mem, i_ahp, refractory_remaining, spiked, pulse_remaining, pulse_drive })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_rate(params: &NeuronParams, dt: f64, seconds: f64, c: &PhysicalConstants) -> (usize, Vec<f64>) {
        let mut s = NeuronState::<f64>::rest(c);
        let inp = SynapticInput::none();
        let mut times = Vec::new();
        let steps = (seconds / dt).round() as usize;
        for k in 0..steps {
            s = neuron_step(&s, params, &inp, dt, c).unwrap();
            if s.has_spiked() {
                times.push((k + 1) as f64 * dt);
            }
        }
        (times.len(), times)
    }

    #[test]
    fn leak_balanced_input_never_spikes() {
        let c = PhysicalConstants::default();
        let mut p = NeuronParams::calibrated_dc(&c);
        p.i_dc = p.i_tau;
        let mut s = NeuronState::<f64>::rest(&c);
        s.i_mem = 100.0 * PICO;
        let inp = SynapticInput::none();
        for _ in 0..20000 {
            let next = neuron_step(&s, &p, &inp, 1e-4, &c).unwrap();
            assert!(next.i_mem <= s.i_mem);
            assert!(!next.has_spiked());
            s = next;
        }
        assert!(s.i_mem < 2.0 * c.dark_current);
    }

    #[test]
    fn calibrated_dc_spikes_regularly() {
        let c = PhysicalConstants::default();
        let p = NeuronParams::calibrated_dc(&c);
        let (n, times) = run_rate(&p, 1e-4, 1.0, &c);
        assert!(n > 5, "only {n} spikes");
        let isi: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        for w in isi.windows(2).skip(isi.len() / 2) {
            assert!((w[0] - w[1]).abs() < 0.1 * w[0]);
        }
    }

    #[test]
    fn feedback_sign_and_midpoint() {
        let c = PhysicalConstants::default();
        let p = NeuronParams::calibrated_dc(&c);
        assert_eq!(positive_feedback(p.feedback.i_gain, &p, &c), 0.0);
        let near_floor = positive_feedback(c.dark_current, &p, &c);
        assert!(near_floor.abs() < 1e-3 * PICO);
        assert!(positive_feedback(2.0 * p.i_gain, &p, &c) > 0.0);
    }

    #[test]
    fn nmda_gate_limits() {
        let g = NmdaGate { threshold: 10.0 * PICO, slope: 5.0, hard: false };
        let i = 7.0 * PICO;
        assert!((nmda_gate(i, 1000.0 * PICO, &g) - i).abs() < 1e-9 * i);
        assert!(nmda_gate(i, 0.1 * PICO, &g) < 1e-9 * i);
        assert_eq!(nmda_gate(i, 10.0 * PICO, &g), i / 2.0);
        let h = NmdaGate { hard: true, ..g };
        assert_eq!(nmda_gate(i, 10.0 * PICO, &h), i);
        assert_eq!(nmda_gate(i, 9.9 * PICO, &h), 0.0);
    }

    #[test]
    fn refractory_spacing() {
        let c = PhysicalConstants::default();
        let mut p = NeuronParams::calibrated_dc(&c);
        p.i_dc = 200.0 * PICO;
        p.refractory = 5e-3;
        let (_, times) = run_rate(&p, 1e-4, 0.5, &c);
        assert!(times.len() > 3);
        for w in times.windows(2) {
            assert!(w[1] - w[0] >= p.refractory - 1e-12);
        }
    }

    #[test]
    fn rejects_bad_step() {
        let c = PhysicalConstants::default();
        let p = NeuronParams::calibrated_dc(&c);
        let s = NeuronState::<f64>::rest(&c);
        assert!(neuron_step(&s, &p, &SynapticInput::none(), -1.0, &c).is_err());
    }

    #[test]
    fn validate_threshold_above_gain() {
        let c = PhysicalConstants::default();
        let mut p = NeuronParams::calibrated_dc(&c);
        assert!(p.validate(&c).is_ok());
        p.spike_threshold = p.i_gain;
        assert!(p.validate(&c).is_err());
    }
}
