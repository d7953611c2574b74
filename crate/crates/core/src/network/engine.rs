use std::fmt::Write as _;

use super::{NetworkError, Source, SpikeTrain, Topology};
use crate::autodiff::Scalar;
use crate::dpi_core::{
    neuron_step, synapse_step, NeuronParams, NeuronState, PhysicalConstants, SynapseKind, SynapseParams, SynapseState,
    SynapticInput, PICO,
};
use crate::hw_model::MismatchSpec;

/// Per-neuron parameters and per-projection weights of a topology.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<S = f64> {
    /// `[population][neuron]`.
    pub neurons: Vec<Vec<NeuronParams<S>>>,
    /// `[population][neuron][kind]`.
    pub synapses: Vec<Vec<[SynapseParams<S>; 4]>>,
    /// `[projection][post * n_pre + pre]`.
    pub weights: Vec<Vec<S>>,
}

// Mismatch streams per neuron: one for the soma, one per synapse kind.
const STREAMS_PER_NEURON: u64 = 5;

impl NetworkParams<f64> {
    pub fn nominal(topo: &Topology) -> Self {
        NetworkParams {
            neurons: topo.populations.iter().map(|p| vec![p.neuron; p.size]).collect(),
            synapses: topo.populations.iter().map(|p| vec![p.synapses; p.size]).collect(),
            weights: topo.projections.iter().map(|p| p.weights.clone()).collect(),
        }
    }

    /// Nominal parameters with independent mismatch on every neuron and
    /// synapse bias. Draws depend only on the seed and the global neuron id.
    pub fn with_mismatch(
        topo: &Topology,
        spec: &MismatchSpec,
        consts: &PhysicalConstants,
    ) -> Result<Self, NetworkError> {
        let mut params = Self::nominal(topo);
        params.apply_mismatch(spec, consts)?;
        Ok(params)
    }

    /// Perturbs the current parameters in place, with the same draws as
    /// [`NetworkParams::with_mismatch`].
    pub fn apply_mismatch(&mut self, spec: &MismatchSpec, consts: &PhysicalConstants) -> Result<(), NetworkError> {
        spec.validate()?;
        let floor = consts.dark_current;
        let mut base = 0u64;
        for (neurons, synapses) in self.neurons.iter_mut().zip(&mut self.synapses) {
            for (j, (n, syns)) in neurons.iter_mut().zip(synapses.iter_mut()).enumerate() {
                let stream = (base + j as u64) * STREAMS_PER_NEURON;
                spec.apply(n, stream, floor);
                for (k, s) in syns.iter_mut().enumerate() {
                    spec.apply(s, stream + 1 + k as u64, floor);
                }
            }
            base += neurons.len() as u64;
        }
        Ok(())
    }

    pub fn lift<T: Scalar>(&self) -> NetworkParams<T> {
        NetworkParams {
            neurons: self.neurons.iter().map(|v| v.iter().map(NeuronParams::lift).collect()).collect(),
            synapses: self
                .synapses
                .iter()
                .map(|v| v.iter().map(|s| [s[0].lift(), s[1].lift(), s[2].lift(), s[3].lift()]).collect())
                .collect(),
            weights: self.weights.iter().map(|w| w.iter().map(|&x| T::from_f64(x)).collect()).collect(),
        }
    }
}

/// Synchronous time-stepped network state.
///
/// External input spikes reach their synapses in the step they occur;
/// spikes emitted by neurons are delivered one step later.
pub struct Simulation<'a, S: Scalar = f64> {
    topo: &'a Topology,
    pub params: NetworkParams<S>,
    consts: PhysicalConstants,
    dt: f64,
    neurons: Vec<Vec<NeuronState<S>>>,
    synapses: Vec<Vec<[SynapseState<S>; 4]>>,
    spikes: Vec<Vec<S>>,
    input_offsets: Vec<usize>,
    steps: usize,
}

impl<'a, S: Scalar> Simulation<'a, S> {
    pub fn new(
        topo: &'a Topology,
        params: NetworkParams<S>,
        consts: PhysicalConstants,
        dt: f64,
    ) -> Result<Self, NetworkError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(crate::dpi_core::DpiError::InvalidTimeStep(dt).into());
        }
        let shape_ok = params.neurons.len() == topo.populations.len()
            && params.synapses.len() == topo.populations.len()
            && params.weights.len() == topo.projections.len()
            && topo
                .populations
                .iter()
                .enumerate()
                .all(|(p, pop)| params.neurons[p].len() == pop.size && params.synapses[p].len() == pop.size)
            && topo.projections.iter().zip(&params.weights).all(|(pr, w)| w.len() == pr.n_pre * pr.n_post);
        if !shape_ok {
            return Err(NetworkError::Shape("parameters do not match the topology".into()));
        }
        let zero = S::from_f64(0.0);
        Ok(Simulation {
            topo,
            consts,
            dt,
            neurons: topo.populations.iter().map(|p| vec![NeuronState::rest(&consts); p.size]).collect(),
            synapses: topo.populations.iter().map(|p| vec![[SynapseState::rest(&consts); 4]; p.size]).collect(),
            spikes: topo.populations.iter().map(|p| vec![zero; p.size]).collect(),
            input_offsets: (0..topo.inputs.len()).map(|g| topo.input_offset(g)).collect(),
            params,
            steps: 0,
        })
    }

    pub fn topology(&self) -> &'a Topology {
        self.topo
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Spike outputs (0/1) of population `p` from the latest step.
    pub fn spikes(&self, p: usize) -> &[S] {
        &self.spikes[p]
    }

    pub fn neuron(&self, p: usize, j: usize) -> &NeuronState<S> {
        &self.neurons[p][j]
    }

    pub fn synapse(&self, p: usize, j: usize, kind: SynapseKind) -> &SynapseState<S> {
        &self.synapses[p][j][kind.index()]
    }

    /// Advances every synapse and neuron by one step.
    pub fn step(&mut self, input: &[bool]) -> Result<(), NetworkError> {
        let topo = self.topo;
        if input.len() != topo.n_inputs() {
            return Err(NetworkError::Shape(format!(
                "{} input channels, topology has {}",
                input.len(),
                topo.n_inputs()
            )));
        }
        let i0 = self.consts.dark_current;
        let zero = S::from_f64(0.0);
        let mut next_spikes = Vec::with_capacity(topo.populations.len());
        for (p, pop) in topo.populations.iter().enumerate() {
            let mut terms: Vec<[Vec<(S, f64)>; 4]> = (0..pop.size).map(|_| Default::default()).collect();
            for (pi, proj) in topo.projections.iter().enumerate().filter(|(_, pr)| pr.post == p) {
                let k = proj.kind.index();
                let w = &self.params.weights[pi];
                match proj.pre {
                    Source::Input(g) => {
                        let chans = &input[self.input_offsets[g]..self.input_offsets[g] + proj.n_pre];
                        for (i, _) in chans.iter().enumerate().filter(|(_, &b)| b) {
                            for (j, t) in terms.iter_mut().enumerate() {
                                let wv = w[j * proj.n_pre + i];
                                if !(wv.is_constant() && wv.value() == 0.0) {
                                    t[k].push((wv, 1.0));
                                }
                            }
                        }
                    }
                    Source::Population(q) => {
                        for (i, &s) in self.spikes[q].iter().enumerate() {
                            if s.is_constant() && s.value() == 0.0 {
                                continue;
                            }
                            for (j, t) in terms.iter_mut().enumerate() {
                                let wv = w[j * proj.n_pre + i];
                                if s.is_constant() {
                                    t[k].push((wv, s.value()));
                                } else {
                                    t[k].push((wv * s, 1.0));
                                }
                            }
                        }
                    }
                }
            }

            let mut out = Vec::with_capacity(pop.size);
            for (j, t) in terms.iter().enumerate() {
                let mut syn_now = [zero; 4];
                for k in 0..4 {
                    let st = self.synapses[p][j][k];
                    let idle = t[k].is_empty() && st.i_syn.is_constant() && st.i_syn.value() <= i0;
                    if !idle {
                        let drive = if t[k].is_empty() { zero } else { S::weighted_sum(&t[k]) };
                        let next = synapse_step(&st, &self.params.synapses[p][j][k], drive, self.dt, &self.consts)?;
                        self.synapses[p][j][k] = next;
                        syn_now[k] = next.i_syn - i0;
                    }
                }
                let input = SynapticInput {
                    ampa: syn_now[SynapseKind::Ampa.index()],
                    nmda: syn_now[SynapseKind::Nmda.index()],
                    gaba_a: syn_now[SynapseKind::GabaA.index()],
                    gaba_b: syn_now[SynapseKind::GabaB.index()],
                    nmda_gate: self.params.synapses[p][j][SynapseKind::Nmda.index()].nmda_gate,
                };
                let next = neuron_step(&self.neurons[p][j], &self.params.neurons[p][j], &input, self.dt, &self.consts)?;
                out.push(next.spiked);
                self.neurons[p][j] = next;
            }
            next_spikes.push(out);
        }
        self.spikes = next_spikes;
        self.steps += 1;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpikeEvent {
    /// Index of the step in which the spike was emitted.
    pub step: usize,
    pub population: usize,
    pub neuron: usize,
}

impl SpikeEvent {
    /// Emission time: the end of the emitting step.
    pub fn time(&self, dt: f64) -> f64 {
        (self.step + 1) as f64 * dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordFlags {
    pub traces: bool,
    /// Record traces every `trace_every` steps.
    pub trace_every: usize,
}

impl Default for RecordFlags {
    fn default() -> Self {
        RecordFlags { traces: false, trace_every: 1 }
    }
}

/// Sampled currents of every neuron, `[sample][global neuron id]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Traces {
    pub steps: Vec<usize>,
    pub i_mem: Vec<Vec<f64>>,
    pub i_ahp: Vec<Vec<f64>>,
    pub i_syn: Vec<Vec<[f64; 4]>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub dt: f64,
    pub steps: usize,
    /// Ordered by step, then population, then neuron.
    pub spikes: Vec<SpikeEvent>,
    pub traces: Option<Traces>,
}

impl SimOutput {
    /// Spike counts of population `p` in steps `[from, to)`.
    pub fn counts(&self, p: usize, size: usize, from: usize, to: usize) -> Vec<usize> {
        let mut c = vec![0; size];
        for e in self.spikes.iter().filter(|e| e.population == p && e.step >= from && e.step < to) {
            c[e.neuron] += 1;
        }
        c
    }
}

/// Runs `params` on `input` and records spikes (and optionally traces).
pub fn simulate_params(
    topo: &Topology,
    params: NetworkParams<f64>,
    input: &SpikeTrain,
    dt: f64,
    consts: &PhysicalConstants,
    record: RecordFlags,
) -> Result<SimOutput, NetworkError> {
    if input.channels != topo.n_inputs() {
        return Err(NetworkError::Shape(format!(
            "input has {} channels, topology needs {}",
            input.channels,
            topo.n_inputs()
        )));
    }
    let mut sim = Simulation::new(topo, params, *consts, dt)?;
    let mut spikes = Vec::new();
    let mut traces = record.traces.then(Traces::default);
    let every = record.trace_every.max(1);
    for step in 0..input.steps {
        sim.step(input.at(step))?;
        for p in 0..topo.populations.len() {
            for (j, s) in sim.spikes(p).iter().enumerate() {
                if *s >= 0.5 {
                    spikes.push(SpikeEvent { step, population: p, neuron: j });
                }
            }
        }
        if let Some(tr) = traces.as_mut() {
            if step % every == 0 {
                tr.steps.push(step);
                let mut mem = Vec::with_capacity(topo.n_neurons());
                let mut ahp = Vec::with_capacity(topo.n_neurons());
                let mut syn = Vec::with_capacity(topo.n_neurons());
                for (p, pop) in topo.populations.iter().enumerate() {
                    for j in 0..pop.size {
                        let n = sim.neuron(p, j);
                        mem.push(n.i_mem);
                        ahp.push(n.i_ahp);
                        syn.push(SynapseKind::ALL.map(|k| sim.synapse(p, j, k).i_syn));
                    }
                }
                tr.i_mem.push(mem);
                tr.i_ahp.push(ahp);
                tr.i_syn.push(syn);
            }
        }
    }
    Ok(SimOutput { dt, steps: input.steps, spikes, traces })
}

/// Runs the topology's nominal parameters, optionally with device mismatch.
pub fn simulate(
    topo: &Topology,
    input: &SpikeTrain,
    dt: f64,
    consts: &PhysicalConstants,
    record: RecordFlags,
    mismatch: Option<&MismatchSpec>,
) -> Result<SimOutput, NetworkError> {
    topo.validate(consts)?;
    let params = match mismatch {
        Some(spec) => NetworkParams::with_mismatch(topo, spec, consts)?,
        None => NetworkParams::nominal(topo),
    };
    simulate_params(topo, params, input, dt, consts, record)
}

pub const SPIKE_CSV_HEADER: &str = "time_s,population,neuron_id";

pub fn spikes_csv(topo: &Topology, out: &SimOutput) -> String {
    let mut s = String::from(SPIKE_CSV_HEADER);
    s.push('\n');
    for e in &out.spikes {
        let _ = writeln!(s, "{:.6},{},{}", e.time(out.dt), topo.populations[e.population].name, e.neuron);
    }
    s
}

pub fn traces_csv_header() -> String {
    let mut h = String::from("time_s,neuron_id,I_mem_pA,I_ahp_pA");
    for k in SynapseKind::ALL {
        let _ = write!(h, ",I_syn_{}_pA", k.name());
    }
    h
}

/// Trace CSV; `neuron_id` is the global id (populations in declaration
/// order).
pub fn traces_csv(out: &SimOutput) -> String {
    let mut s = traces_csv_header();
    s.push('\n');
    if let Some(tr) = &out.traces {
        for (r, &step) in tr.steps.iter().enumerate() {
            let t = (step + 1) as f64 * out.dt;
            for (n, (&m, &a)) in tr.i_mem[r].iter().zip(&tr.i_ahp[r]).enumerate() {
                let _ = write!(s, "{t:.6},{n},{:.6},{:.6}", m / PICO, a / PICO);
                for v in tr.i_syn[r][n] {
                    let _ = write!(s, ",{:.6}", v / PICO);
                }
                s.push('\n');
            }
        }
    }
    s
}
