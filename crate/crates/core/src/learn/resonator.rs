use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rate_target_loss, train_parameters, AdamConfig, Evaluation, HistoryRow, LearnError, TrainParam};
use crate::autodiff::{Tape, Var};
use crate::dpi_core::{neuron_step, NeuronParams, NeuronState, PhysicalConstants, SynapticInput, PICO};

/// Single neuron driven by a constant current, trained to fire at a target
/// rate by adjusting its leak `I_τ` and spike threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonatorConfig {
    pub i_dc_pa: f64,
    pub target_hz: f64,
    /// Simulated time per epoch, starting from rest (s).
    pub duration: f64,
    pub dt: f64,
    pub epochs: usize,
    /// Stop once the rate is this close to the target (Hz).
    pub tolerance_hz: f64,
    /// Initial `I_τ` drawn log-uniformly from this range (pA).
    pub init_i_tau_pa: [f64; 2],
    /// Initial threshold drawn uniformly from this range (pA).
    pub init_threshold_pa: [f64; 2],
    pub optimizer: AdamConfig,
}

impl Default for ResonatorConfig {
    fn default() -> Self {
        ResonatorConfig {
            i_dc_pa: 10.0,
            target_hz: 2.5,
            duration: 20.0,
            dt: 1e-4,
            epochs: 40,
            tolerance_hz: 0.05,
            init_i_tau_pa: [1.0, 4.5],
            init_threshold_pa: [1000.0, 3000.0],
            optimizer: AdamConfig { decay: 0.9, ..AdamConfig::with_lr(0.1) },
        }
    }
}

impl ResonatorConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let ranges_ok =
            [self.init_i_tau_pa, self.init_threshold_pa].iter().all(|r| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite());
        if !(self.i_dc_pa > 0.0
            && self.target_hz >= 0.0
            && self.duration > 0.0
            && self.dt > 0.0
            && self.dt < self.duration
            && self.tolerance_hz >= 0.0
            && ranges_ok)
        {
            return Err(LearnError::Config(format!("invalid resonator settings {self:?}")));
        }
        self.optimizer.validate()
    }

    /// The neuron being tuned: slow adaptation, so the rate is set by the
    /// interplay of leak and AHP rather than by the refractory period.
    pub fn neuron(&self, consts: &PhysicalConstants) -> NeuronParams {
        let mut p = NeuronParams::calibrated_dc(consts);
        p.i_dc = self.i_dc_pa * PICO;
        p.ahp.capacitance = 20.0 * PICO;
        p.ahp.i_tau = 0.5 * PICO;
        p.ahp.i_gain = 10.0 * PICO;
        p.ahp.i_weight = 50.0 * PICO;
        p.ahp.pulse_width = Some(1e-3);
        p.surrogate = p.surrogate.with_detached_reset(true);
        p
    }

    fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResonatorResult {
    pub i_tau: f64,
    pub threshold: f64,
    /// Rate at the returned parameters (Hz).
    pub rate: f64,
    pub epochs: usize,
    pub converged: bool,
    pub history: Vec<HistoryRow>,
}

/// Firing rate of `params` over `duration` seconds from rest.
pub fn resonator_rate(
    params: &NeuronParams,
    duration: f64,
    dt: f64,
    consts: &PhysicalConstants,
) -> Result<f64, LearnError> {
    let steps = (duration / dt).round() as usize;
    let mut s = NeuronState::<f64>::rest(consts);
    let input = SynapticInput::none();
    let mut count = 0usize;
    for _ in 0..steps {
        s = neuron_step(&s, params, &input, dt, consts)?;
        count += s.has_spiked() as usize;
    }
    Ok(count as f64 / (steps as f64 * dt))
}

fn evaluate(
    cfg: &ResonatorConfig,
    base: &NeuronParams,
    values: &[f64],
    consts: &PhysicalConstants,
) -> Result<Evaluation, LearnError> {
    let steps = cfg.steps();
    let duration = steps as f64 * cfg.dt;
    let tape = Tape::with_capacity(steps * 64);
    let i_tau = tape.var(values[0]);
    let threshold = tape.var(values[1]);
    let mut q = base.lift::<Var>();
    q.i_tau = i_tau;
    q.spike_threshold = threshold;
    let mut s = NeuronState::<Var>::rest(consts);
    let input = SynapticInput::none();
    let mut spikes = Vec::new();
    for _ in 0..steps {
        s = neuron_step(&s, &q, &input, cfg.dt, consts)?;
        if !s.spiked.is_constant() {
            spikes.push((s.spiked, 1.0));
        }
    }
    let count = Var::weighted_sum(&spikes);
    let loss = rate_target_loss(count, duration, cfg.target_hz);
    let rate = count.value() / duration;
    let g = tape.backward(loss)?;
    Ok(Evaluation {
        loss: loss.value(),
        metric: rate,
        grad: vec![g.wrt(&i_tau), g.wrt(&threshold)],
        converged: (rate - cfg.target_hz).abs() <= cfg.tolerance_hz,
    })
}

/// Trains `I_τ` and the spike threshold from a seeded random start.
pub fn train_resonator(
    cfg: &ResonatorConfig,
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<ResonatorResult, LearnError> {
    cfg.validate()?;
    let base = cfg.neuron(consts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.init_i_tau_pa;
    let i_tau = (rng.random_range(lo.ln()..=hi.ln())).exp() * PICO;
    let [tlo, thi] = cfg.init_threshold_pa;
    let min_threshold = 1.05 * base.i_gain;
    let threshold = (rng.random_range(tlo..=thi) * PICO).max(min_threshold);
    let params = vec![
        TrainParam::current("I_tau", i_tau, consts.dark_current),
        TrainParam::current("spike_threshold", threshold, min_threshold),
    ];
    let outcome = train_parameters(params, cfg.optimizer, cfg.epochs, |v, _| evaluate(cfg, &base, v, consts))?;
    let rate = outcome.history.last().map_or(f64::NAN, |h| h.metric);
    Ok(ResonatorResult {
        i_tau: outcome.params[0].value,
        threshold: outcome.params[1].value,
        rate,
        epochs: outcome.epochs,
        converged: outcome.converged,
        history: outcome.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_falls_with_leak() {
        let c = PhysicalConstants::default();
        let cfg = ResonatorConfig::default();
        let mut p = cfg.neuron(&c);
        p.i_tau = 1.5 * PICO;
        let fast = resonator_rate(&p, 5.0, 1e-4, &c).unwrap();
        p.i_tau = 4.0 * PICO;
        let slow = resonator_rate(&p, 5.0, 1e-4, &c).unwrap();
        assert!(fast > slow && slow > 0.0, "{fast} vs {slow}");
    }

    #[test]
    fn gradient_sign_points_to_target() {
        let c = PhysicalConstants::default();
        let cfg = ResonatorConfig { duration: 5.0, ..Default::default() };
        let base = cfg.neuron(&c);
        // too fast: raising the leak should lower the loss
        let e = evaluate(&cfg, &base, &[1.5 * PICO, 2000.0 * PICO], &c).unwrap();
        assert!(e.metric > cfg.target_hz);
        assert!(e.grad[0] < 0.0 && e.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn evaluation_matches_plain_simulation() {
        let c = PhysicalConstants::default();
        let cfg = ResonatorConfig { duration: 3.0, ..Default::default() };
        let mut p = cfg.neuron(&c);
        p.i_tau = 2.2 * PICO;
        let e = evaluate(&cfg, &p, &[p.i_tau, p.spike_threshold], &c).unwrap();
        assert_eq!(e.metric, resonator_rate(&p, 3.0, 1e-4, &c).unwrap());
    }
}
