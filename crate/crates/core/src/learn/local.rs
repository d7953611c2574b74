use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::autodiff::SurrogateSpec;
use crate::dpi_core::{NeuronParams, PhysicalConstants, SynapseKind, PICO};
use crate::network::{NetworkParams, Population, Simulation, SpikeEvent, SpikeTrain, Topology};

/// Postsynaptic quantities visible to a local rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostState {
    pub i_mem: f64,
    /// Low-pass estimate of the neuron's own rate (Hz).
    pub rate: f64,
}

/// Online per-synapse plasticity.
pub trait LocalRule {
    /// Weight change of one synapse over one step of length `dt`.
    fn delta(&self, pre_trace: f64, post: &PostState, teach: f64, lr: f64, dt: f64) -> f64;
    /// Weights are clipped to this interval after every update.
    fn bounds(&self) -> (f64, f64);
}

/// `ΔW = lr · pre · σ'(I_mem − θ) · (teach − post_rate) · dt`, where σ' is
/// the surrogate density normalised to 1 at threshold and `teach` is the
/// teacher's rate estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreeFactorRule {
    pub surrogate: SurrogateSpec,
    pub threshold: f64,
    pub w_max: f64,
}

impl LocalRule for ThreeFactorRule {
    fn delta(&self, pre_trace: f64, post: &PostState, teach: f64, lr: f64, dt: f64) -> f64 {
        if pre_trace == 0.0 {
            return 0.0;
        }
        lr * pre_trace * self.surrogate.normalized(post.i_mem - self.threshold) * (teach - post.rate) * dt
    }

    fn bounds(&self) -> (f64, f64) {
        (0.0, self.w_max)
    }
}

/// Applies `rule` to a dense `post × pre` matrix for one step.
pub fn local_rule_step<R: LocalRule + ?Sized>(
    rule: &R,
    weights: &mut [f64],
    pre_traces: &[f64],
    posts: &[PostState],
    teach: &[f64],
    lr: f64,
    dt: f64,
) {
    let n_pre = pre_traces.len();
    let (lo, hi) = rule.bounds();
    for (j, (post, &t)) in posts.iter().zip(teach).enumerate() {
        for (w, &pre) in weights[j * n_pre..(j + 1) * n_pre].iter_mut().zip(pre_traces) {
            let d = rule.delta(pre, post, t, lr, dt);
            if d != 0.0 {
                *w = (*w + d).clamp(lo, hi);
            }
        }
    }
}

/// Exponential rate estimate: jumps by `1/τ` per spike, decays with `τ`.
#[derive(Clone, Debug, PartialEq)]
struct Traces {
    values: Vec<f64>,
    decay: f64,
    jump: f64,
}

impl Traces {
    fn new(n: usize, tau: f64, dt: f64) -> Self {
        Traces { values: vec![0.0; n], decay: (-dt / tau).exp(), jump: 1.0 / tau }
    }

    fn update(&mut self, spiked: impl Iterator<Item = bool>) {
        for (v, s) in self.values.iter_mut().zip(spiked) {
            *v = *v * self.decay + if s { self.jump } else { 0.0 };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalExperimentConfig {
    pub n_input: usize,
    pub n_hidden: usize,
    pub n_output: usize,
    /// Phase lengths (s): no teaching, alternating teaching, test.
    pub free: f64,
    pub train: f64,
    pub test: f64,
    /// Each class is shown for this long before switching (s).
    pub switch_every: f64,
    pub dt: f64,
    /// Input channel rates: a random half of the channels is at `high_hz` for
    /// one class and at `low_hz` for the other.
    pub low_hz: f64,
    pub high_hz: f64,
    /// Teacher rate when its class is present / absent.
    pub teacher_on_hz: f64,
    pub teacher_off_hz: f64,
    /// Probability and weight of an input-to-hidden connection.
    pub input_p: f64,
    pub input_weight: f64,
    pub init_range: [f64; 2],
    pub lr: f64,
    pub w_max: f64,
    /// Time constant of the pre, post and teacher traces (s).
    pub trace_tau: f64,
    /// Width of the rule's fast-sigmoid gate (pA).
    pub gate_width_pa: f64,
}

impl Default for LocalExperimentConfig {
    fn default() -> Self {
        LocalExperimentConfig {
            n_input: 50,
            n_hidden: 50,
            n_output: 50,
            free: 4.0,
            train: 20.0,
            test: 8.0,
            switch_every: 1.0,
            dt: 1e-4,
            low_hz: 5.0,
            high_hz: 40.0,
            teacher_on_hz: 50.0,
            teacher_off_hz: 5.0,
            input_p: 0.04,
            input_weight: 8.0,
            init_range: [0.0, 0.5],
            lr: 5e-3,
            w_max: 8.0,
            trace_tau: 0.1,
            gate_width_pa: 1000.0,
        }
    }
}

impl LocalExperimentConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = [self.switch_every, self.dt, self.trace_tau, self.gate_width_pa, self.w_max];
        let rates = [self.low_hz, self.high_hz, self.teacher_on_hz, self.teacher_off_hz];
        let ok = self.n_input > 0
            && self.n_hidden > 0
            && self.n_output >= 2
            && self.n_output.is_multiple_of(2)
            && [self.free, self.train, self.test].iter().all(|t| *t >= 0.0 && t.is_finite())
            && positive.iter().all(|v| *v > 0.0 && v.is_finite())
            && rates.iter().all(|r| *r >= 0.0 && r * self.dt < 1.0)
            && (0.0..=1.0).contains(&self.input_p)
            && self.input_weight >= 0.0
            && self.lr >= 0.0
            && 0.0 <= self.init_range[0]
            && self.init_range[0] <= self.init_range[1]
            && self.init_range[1] <= self.w_max;
        if ok {
            Ok(())
        } else {
            Err(LearnError::Config(format!("invalid local-rule experiment settings {self:?}")))
        }
    }

    fn steps(&self, seconds: f64) -> usize {
        (seconds / self.dt).round() as usize
    }

    /// Steps at which the free, training and test phases start, plus the end.
    pub fn phase_bounds(&self) -> [usize; 4] {
        let a = self.steps(self.free);
        let b = a + self.steps(self.train);
        [0, a, b, b + self.steps(self.test)]
    }

    /// Class shown at `step`; classes alternate every `switch_every`.
    pub fn class_at(&self, step: usize) -> usize {
        (step / self.steps(self.switch_every).max(1)) % 2
    }

    fn neuron(&self, consts: &PhysicalConstants) -> NeuronParams {
        let mut n = NeuronParams::calibrated_dc(consts);
        n.i_dc = consts.dark_current;
        n.ahp.enabled = false;
        n
    }

    pub fn rule(&self, consts: &PhysicalConstants) -> Result<ThreeFactorRule, LearnError> {
        let n = self.neuron(consts);
        Ok(ThreeFactorRule {
            surrogate: SurrogateSpec::fast_sigmoid(1.0 / (self.gate_width_pa * PICO))?,
            threshold: n.spike_threshold,
            w_max: self.w_max,
        })
    }
}

/// Inputs `features` and `teacher`, populations `hidden` and `output`.
/// Projection 0 is input→hidden (fixed), projection 1 hidden→output
/// (plastic). Teacher channel `k` supervises output neurons of group `k`
/// (first or second half) through the rule only.
pub fn local_topology(cfg: &LocalExperimentConfig, seed: u64, consts: &PhysicalConstants) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c6f_6361_6c00);
    let mut t = Topology::default();
    let features = t.add_input("features", cfg.n_input);
    t.add_input("teacher", 2);
    let n = cfg.neuron(consts);
    let hidden = t.add_population(Population::new("hidden", cfg.n_hidden, n));
    let output = t.add_population(Population::new("output", cfg.n_output, n));
    let p = t.connect(features, hidden, SynapseKind::Ampa, 0.0);
    for w in t.projections[p].weights.iter_mut() {
        if rng.random_bool(cfg.input_p) {
            *w = cfg.input_weight;
        }
    }
    let q = t.connect(crate::network::Source::Population(hidden), output, SynapseKind::Ampa, 0.0);
    let [lo, hi] = cfg.init_range;
    for w in t.projections[q].weights.iter_mut() {
        *w = if hi > lo { rng.random_range(lo..hi) } else { lo };
    }
    t
}

/// Poisson input of the whole run: the class pattern on `features` and the
/// teacher rates during the training phase only.
pub fn local_input(cfg: &LocalExperimentConfig, seed: u64) -> SpikeTrain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // complementary patterns: every channel is high for exactly one class
    let first: Vec<bool> = (0..cfg.n_input).map(|_| rng.random_bool(0.5)).collect();
    let patterns: Vec<Vec<f64>> = [true, false]
        .iter()
        .map(|&c| first.iter().map(|&h| if h == c { cfg.high_hz } else { cfg.low_hz }).collect())
        .collect();
    let [_, train_start, test_start, end] = cfg.phase_bounds();
    let mut train = SpikeTrain::silent(cfg.n_input + 2, end);
    for step in 0..end {
        let class = cfg.class_at(step);
        for (i, &r) in patterns[class].iter().enumerate() {
            if rng.random::<f64>() < r * cfg.dt {
                train.set(step, i, true);
            }
        }
        if (train_start..test_start).contains(&step) {
            for k in 0..2 {
                let r = if k == class { cfg.teacher_on_hz } else { cfg.teacher_off_hz };
                if rng.random::<f64>() < r * cfg.dt {
                    train.set(step, cfg.n_input + k, true);
                }
            }
        }
    }
    train
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalExperimentReport {
    pub topology: Topology,
    pub input: SpikeTrain,
    /// Spikes of the hidden and output populations over the whole run.
    pub spikes: Vec<SpikeEvent>,
    pub phase_bounds: [usize; 4],
    /// `[group][class]` mean output rate during the test phase (Hz).
    pub test_rates: [[f64; 2]; 2],
    pub final_weights: Vec<f64>,
}

impl LocalExperimentReport {
    /// Own-class rate over other-class rate, for each group.
    pub fn selectivity(&self) -> [f64; 2] {
        [0, 1].map(|g| self.test_rates[g][g] / self.test_rates[g][1 - g].max(f64::MIN_POSITIVE))
    }
}

/// Free run, teaching with the local rule, then a test phase with learning
/// off and the teachers silent.
pub fn run_local_experiment<R: LocalRule + ?Sized>(
    cfg: &LocalExperimentConfig,
    rule: &R,
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<LocalExperimentReport, LearnError> {
    cfg.validate()?;
    let topo = local_topology(cfg, seed, consts);
    let input = local_input(cfg, seed.wrapping_add(1));
    let bounds = cfg.phase_bounds();
    let [_, train_start, test_start, end] = bounds;
    let (hidden, output) = (0, 1);
    let plastic = 1;
    let mut sim = Simulation::new(&topo, NetworkParams::nominal(&topo), *consts, cfg.dt)?;
    let mut pre = Traces::new(cfg.n_hidden, cfg.trace_tau, cfg.dt);
    let mut post = Traces::new(cfg.n_output, cfg.trace_tau, cfg.dt);
    let mut teach = Traces::new(2, cfg.trace_tau, cfg.dt);
    let group = cfg.n_output / 2;
    let mut spikes = Vec::new();
    let mut counts = [[0usize; 2]; 2];
    let mut class_steps = [0usize; 2];
    let mut teach_per_neuron = vec![0.0; cfg.n_output];
    let mut posts = vec![PostState { i_mem: 0.0, rate: 0.0 }; cfg.n_output];
    for step in 0..end {
        let frame = input.at(step);
        sim.step(frame)?;
        for p in [hidden, output] {
            for (j, &s) in sim.spikes(p).iter().enumerate() {
                if s >= 0.5 {
                    spikes.push(SpikeEvent { step, population: p, neuron: j });
                }
            }
        }
        pre.update(sim.spikes(hidden).iter().map(|&s| s >= 0.5));
        post.update(sim.spikes(output).iter().map(|&s| s >= 0.5));
        teach.update(frame[cfg.n_input..].iter().copied());
        if (train_start..test_start).contains(&step) && cfg.lr > 0.0 {
            for j in 0..cfg.n_output {
                teach_per_neuron[j] = teach.values[j / group];
                posts[j] = PostState { i_mem: sim.neuron(output, j).i_mem, rate: post.values[j] };
            }
            local_rule_step(
                rule,
                &mut sim.params.weights[plastic],
                &pre.values,
                &posts,
                &teach_per_neuron,
                cfg.lr,
                cfg.dt,
            );
        }
        if step >= test_start {
            let class = cfg.class_at(step);
            class_steps[class] += 1;
            for (j, &s) in sim.spikes(output).iter().enumerate() {
                if s >= 0.5 {
                    counts[j / group][class] += 1;
                }
            }
        }
    }
    let mut test_rates = [[0.0; 2]; 2];
    for g in 0..2 {
        for c in 0..2 {
            let seconds = class_steps[c] as f64 * cfg.dt;
            test_rates[g][c] = if seconds > 0.0 { counts[g][c] as f64 / (group as f64 * seconds) } else { 0.0 };
        }
    }
    let final_weights = sim.params.weights[plastic].clone();
    Ok(LocalExperimentReport { topology: topo, input, spikes, phase_bounds: bounds, test_rates, final_weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> ThreeFactorRule {
        ThreeFactorRule {
            surrogate: SurrogateSpec::fast_sigmoid(1.0 / (1000.0 * PICO)).unwrap(),
            threshold: 2000.0 * PICO,
            w_max: 4.0,
        }
    }

    #[test]
    fn matched_teacher_gives_no_change() {
        let post = PostState { i_mem: 1500.0 * PICO, rate: 30.0 };
        assert_eq!(rule().delta(12.0, &post, 30.0, 0.1, 1e-4), 0.0);
    }

    #[test]
    fn silent_pre_gives_no_change() {
        let post = PostState { i_mem: 2000.0 * PICO, rate: 0.0 };
        assert_eq!(rule().delta(0.0, &post, 50.0, 0.1, 1e-4), 0.0);
        let mut w = vec![1.0, 2.0];
        local_rule_step(&rule(), &mut w, &[0.0, 5.0], &[post], &[50.0], 0.1, 1e-4);
        assert_eq!(w[0], 1.0);
        assert!(w[1] > 2.0);
    }

    #[test]
    fn updates_stay_in_bounds() {
        let hot = PostState { i_mem: 2000.0 * PICO, rate: 0.0 };
        let busy = PostState { i_mem: 2000.0 * PICO, rate: 500.0 };
        let mut w = vec![3.9, 0.1];
        for _ in 0..1000 {
            local_rule_step(&rule(), &mut w[..1], &[100.0], &[hot], &[50.0], 10.0, 1e-3);
            local_rule_step(&rule(), &mut w[1..], &[100.0], &[busy], &[5.0], 10.0, 1e-3);
        }
        assert_eq!(w, vec![4.0, 0.0]);
    }

    #[test]
    fn input_and_phase_layout() {
        let cfg = LocalExperimentConfig { free: 0.2, train: 0.4, test: 0.2, switch_every: 0.1, ..Default::default() };
        assert_eq!(cfg.phase_bounds(), [0, 2000, 6000, 8000]);
        assert_eq!((cfg.class_at(999), cfg.class_at(1000)), (0, 1));
        let input = local_input(&cfg, 3);
        let teacher_spikes =
            |from: usize, to: usize| (from..to).filter(|&s| input.at(s)[50] || input.at(s)[51]).count();
        assert_eq!(teacher_spikes(0, 2000), 0);
        assert!(teacher_spikes(2000, 6000) > 0);
        assert_eq!(teacher_spikes(6000, 8000), 0);
        assert_eq!(input, local_input(&cfg, 3));
    }
}
