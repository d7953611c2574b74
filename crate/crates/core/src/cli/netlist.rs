//! `dpi-netlist v1`: integer synapse counts plus bias codes.
//!
//! ```text
//! dpi-netlist v1
//! fan_in_limit 64
//! input pixels 256
//! population readout 2
//! model readout C_mem=2e-12 refractory=2e-3 reset=5e-13 ahp=0 ...
//! synapse readout AMPA C=2e-12 gate_threshold=5e-11 gate_slope=5 gate_hard=0
//! neuron readout 0 IF_TAU=6:22:4.100 IF_GAIN=6:88:500.000 ...
//! projection pixels readout AMPA
//! connection pixels readout AMPA 17 0 2
//! ```
//!
//! Bias entries are `coarse:fine:current_pA`; the code is authoritative and
//! the current is a readable copy checked against the calibration table.
//! Connections read `pre post kind pre_id post_id count`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::autodiff::{SurrogateKind, SurrogateSpec};
use crate::dpi_core::{NeuronParams, NmdaGate, PhysicalConstants, SynapseKind, SynapseParams, PICO};
use crate::hw_model::{BiasCode, CalibrationTable};
use crate::network::{NetworkParams, Population, Projection, Source, Topology};

pub const NETLIST_HEADER: &str = "dpi-netlist v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("E10 line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("E11 unsupported header '{0}'")]
    Version(String),
    #[error("E12 duplicate {0}")]
    Duplicate(String),
    #[error("E20 {population}[{neuron}] receives {total} synapses, limit {limit}")]
    FanIn { population: String, neuron: usize, total: u64, limit: usize },
    #[error("E30 {population}[{neuron}] bias {bias}: {message}")]
    BiasRange { population: String, neuron: usize, bias: String, message: String },
    #[error("E31 {population}[{neuron}] is missing bias {bias}")]
    MissingBias { population: String, neuron: usize, bias: String },
    #[error("E32 {population}[{neuron}] bias {bias}: listed {listed_pa:.3} pA, code gives {actual_pa:.3} pA")]
    BiasMismatch { population: String, neuron: usize, bias: String, listed_pa: f64, actual_pa: f64 },
    #[error("E40 dangling reference: {0}")]
    Dangling(String),
    #[error("E41 connection with count {0}; counts must be >= 1")]
    Count(u64),
    #[error("E50 weights are not deployable: {0}")]
    Weights(String),
    #[error("E51 unsupported neuron model: {0}")]
    Model(String),
}

impl NetlistError {
    /// Stable numeric code, also the prefix of the message.
    pub fn code(&self) -> u32 {
        match self {
            NetlistError::Syntax { .. } => 10,
            NetlistError::Version(_) => 11,
            NetlistError::Duplicate(_) => 12,
            NetlistError::FanIn { .. } => 20,
            NetlistError::BiasRange { .. } => 30,
            NetlistError::MissingBias { .. } => 31,
            NetlistError::BiasMismatch { .. } => 32,
            NetlistError::Dangling(_) => 40,
            NetlistError::Count(_) => 41,
            NetlistError::Weights(_) => 50,
            NetlistError::Model(_) => 51,
        }
    }
}

/// Circuit constants of a population that are not set by bias generators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronModel {
    pub capacitance: f64,
    pub refractory: f64,
    pub reset_current: f64,
    pub ahp_enabled: bool,
    pub ahp_capacitance: f64,
    pub ahp_pulse_width: Option<f64>,
    pub feedback_enabled: bool,
    pub feedback_alpha: f64,
    pub surrogate: SurrogateSpec,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynapseModel {
    pub capacitance: f64,
    pub nmda_gate: NmdaGate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetlistPopulation {
    pub name: String,
    pub size: usize,
    pub model: NeuronModel,
    /// Indexed by [`SynapseKind::index`].
    pub synapses: [SynapseModel; 4],
    /// Per-neuron codes by bias name.
    pub biases: Vec<BTreeMap<String, BiasCode>>,
    /// Currents as listed in the file (pA); only used to catch edits that
    /// disagree with the codes.
    listed_pa: Vec<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetlistProjection {
    pub pre: String,
    pub post: String,
    pub kind: SynapseKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connection {
    pub pre: String,
    pub post: String,
    pub kind: SynapseKind,
    pub pre_id: usize,
    pub post_id: usize,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Netlist {
    pub fan_in_limit: usize,
    pub inputs: Vec<(String, usize)>,
    pub populations: Vec<NetlistPopulation>,
    pub projections: Vec<NetlistProjection>,
    pub connections: Vec<Connection>,
}

const NEURON_BIASES: [&str; 7] = ["IF_TAU", "IF_GAIN", "IF_DC", "IF_THR", "AHP_TAU", "AHP_GAIN", "AHP_WEIGHT"];

/// Every bias a neuron carries, in file order.
pub fn bias_names() -> Vec<String> {
    let mut names: Vec<String> = NEURON_BIASES.iter().map(|s| s.to_string()).collect();
    for k in SynapseKind::ALL {
        for part in ["TAU", "GAIN", "WEIGHT"] {
            names.push(format!("{}_{part}", k.name()));
        }
    }
    names
}

fn bias_slots<'a>(n: &'a mut NeuronParams, syn: &'a mut [SynapseParams; 4]) -> Vec<&'a mut f64> {
    let mut v: Vec<&mut f64> = vec![
        &mut n.i_tau,
        &mut n.i_gain,
        &mut n.i_dc,
        &mut n.spike_threshold,
        &mut n.ahp.i_tau,
        &mut n.ahp.i_gain,
        &mut n.ahp.i_weight,
    ];
    for s in syn.iter_mut() {
        v.extend([&mut s.i_tau, &mut s.i_gain, &mut s.i_weight]);
    }
    v
}

fn bias_values(n: &NeuronParams, syn: &[SynapseParams; 4]) -> Vec<f64> {
    let (mut n, mut syn) = (*n, *syn);
    bias_slots(&mut n, &mut syn).into_iter().map(|x| *x).collect()
}

fn check_feedback(pop: &str, n: &NeuronParams) -> Result<(), NetlistError> {
    // the feedback sigmoid is centred by the same generator as the gain
    if n.feedback.enabled && n.feedback.i_gain != n.i_gain {
        return Err(NetlistError::Model(format!("{pop}: feedback gain must equal IF_GAIN")));
    }
    Ok(())
}

fn snap(table: &CalibrationTable, pop: &str, bias: &str, current: f64) -> Result<(BiasCode, f64), NetlistError> {
    table.nearest_code(bias, current).map_err(|e| NetlistError::BiasRange {
        population: pop.to_string(),
        neuron: 0,
        bias: bias.to_string(),
        message: e.to_string(),
    })
}

/// The network as the hardware would run it: every bias replaced by the
/// current of its nearest calibrated code. Weights are left untouched.
pub fn deployed_network(topo: &Topology, table: &CalibrationTable) -> Result<Topology, NetlistError> {
    let names = bias_names();
    let mut out = topo.clone();
    for pop in out.populations.iter_mut() {
        check_feedback(&pop.name, &pop.neuron)?;
        let slots = bias_slots(&mut pop.neuron, &mut pop.synapses);
        for (slot, name) in slots.into_iter().zip(&names) {
            *slot = snap(table, &pop.name, name, *slot)?.1;
        }
        pop.neuron.feedback.i_gain = pop.neuron.i_gain;
    }
    Ok(out)
}

fn source_name(topo: &Topology, s: Source) -> String {
    match s {
        Source::Input(g) => topo.inputs[g].name.clone(),
        Source::Population(p) => topo.populations[p].name.clone(),
    }
}

impl Netlist {
    /// Describes `topo` for the hardware. Weights must already be integer
    /// synapse counts; the result is validated against `table`.
    pub fn export(topo: &Topology, table: &CalibrationTable, fan_in_limit: usize) -> Result<Netlist, NetlistError> {
        let names = bias_names();
        let mut populations = Vec::with_capacity(topo.populations.len());
        for pop in &topo.populations {
            check_feedback(&pop.name, &pop.neuron)?;
            let mut codes = BTreeMap::new();
            let mut listed = BTreeMap::new();
            for (value, name) in bias_values(&pop.neuron, &pop.synapses).into_iter().zip(&names) {
                let (code, current) = snap(table, &pop.name, name, value)?;
                codes.insert(name.clone(), code);
                listed.insert(name.clone(), round_pa(current));
            }
            let n = &pop.neuron;
            populations.push(NetlistPopulation {
                name: pop.name.clone(),
                size: pop.size,
                model: NeuronModel {
                    capacitance: n.capacitance,
                    refractory: n.refractory,
                    reset_current: n.reset_current,
                    ahp_enabled: n.ahp.enabled,
                    ahp_capacitance: n.ahp.capacitance,
                    ahp_pulse_width: n.ahp.pulse_width,
                    feedback_enabled: n.feedback.enabled,
                    feedback_alpha: n.feedback.alpha,
                    surrogate: n.surrogate,
                },
                synapses: pop.synapses.map(|s| SynapseModel { capacitance: s.capacitance, nmda_gate: s.nmda_gate }),
                biases: vec![codes; pop.size],
                listed_pa: vec![listed; pop.size],
            });
        }
        let mut projections = Vec::new();
        let mut connections = Vec::new();
        for (pi, proj) in topo.projections.iter().enumerate() {
            let pre = source_name(topo, proj.pre);
            let post = topo.populations[proj.post].name.clone();
            projections.push(NetlistProjection { pre: pre.clone(), post: post.clone(), kind: proj.kind });
            for j in 0..proj.n_post {
                for (i, &w) in proj.row(j).iter().enumerate() {
                    if !(w >= 0.0 && w.fract() == 0.0 && w < u32::MAX as f64) {
                        return Err(NetlistError::Weights(format!("projection {pi} weight [{j}][{i}] = {w}")));
                    }
                    if w > 0.0 {
                        connections.push(Connection {
                            pre: pre.clone(),
                            post: post.clone(),
                            kind: proj.kind,
                            pre_id: i,
                            post_id: j,
                            count: w as u64,
                        });
                    }
                }
            }
        }
        let netlist = Netlist {
            fan_in_limit,
            inputs: topo.inputs.iter().map(|g| (g.name.clone(), g.size)).collect(),
            populations,
            projections,
            connections,
        };
        netlist.validate(table)?;
        Ok(netlist)
    }

    /// Checks declarations, references, bias codes and the fan-in budget.
    pub fn validate(&self, table: &CalibrationTable) -> Result<(), NetlistError> {
        let mut sizes: HashMap<&str, (usize, bool)> = HashMap::new();
        for (name, size) in &self.inputs {
            if sizes.insert(name.as_str(), (*size, false)).is_some() {
                return Err(NetlistError::Duplicate(format!("name '{name}'")));
            }
        }
        let names = bias_names();
        for pop in &self.populations {
            if sizes.insert(pop.name.as_str(), (pop.size, true)).is_some() {
                return Err(NetlistError::Duplicate(format!("name '{}'", pop.name)));
            }
            if pop.biases.len() != pop.size {
                return Err(NetlistError::MissingBias {
                    population: pop.name.clone(),
                    neuron: pop.biases.len(),
                    bias: "*".into(),
                });
            }
            for (j, codes) in pop.biases.iter().enumerate() {
                for name in &names {
                    if !codes.contains_key(name) {
                        return Err(NetlistError::MissingBias {
                            population: pop.name.clone(),
                            neuron: j,
                            bias: name.clone(),
                        });
                    }
                }
                for (bias, &code) in codes {
                    let range_err = |message: String| NetlistError::BiasRange {
                        population: pop.name.clone(),
                        neuron: j,
                        bias: bias.clone(),
                        message,
                    };
                    if !names.contains(bias) {
                        return Err(range_err("not a bias of this neuron".into()));
                    }
                    let current = table.code_to_current(bias, code).map_err(|e| range_err(e.to_string()))?;
                    if let Some(&listed) = pop.listed_pa.get(j).and_then(|m| m.get(bias)) {
                        if (listed - round_pa(current)).abs() > 1e-9 {
                            return Err(NetlistError::BiasMismatch {
                                population: pop.name.clone(),
                                neuron: j,
                                bias: bias.clone(),
                                listed_pa: listed,
                                actual_pa: current / PICO,
                            });
                        }
                    }
                }
            }
        }
        let mut declared = HashSet::new();
        for p in &self.projections {
            if !sizes.contains_key(p.pre.as_str()) {
                return Err(NetlistError::Dangling(format!("projection source '{}'", p.pre)));
            }
            if !matches!(sizes.get(p.post.as_str()), Some((_, true))) {
                return Err(NetlistError::Dangling(format!("projection target population '{}'", p.post)));
            }
            if !declared.insert((p.pre.as_str(), p.post.as_str(), p.kind)) {
                return Err(NetlistError::Duplicate(format!("projection {} -> {} {}", p.pre, p.post, p.kind)));
            }
        }
        let mut seen = HashSet::new();
        let mut fan_in: HashMap<(&str, usize), u64> = HashMap::new();
        for c in &self.connections {
            if !declared.contains(&(c.pre.as_str(), c.post.as_str(), c.kind)) {
                return Err(NetlistError::Dangling(format!("no projection {} -> {} {}", c.pre, c.post, c.kind)));
            }
            let (pre_size, post_size) = (sizes[c.pre.as_str()].0, sizes[c.post.as_str()].0);
            if c.pre_id >= pre_size || c.post_id >= post_size {
                return Err(NetlistError::Dangling(format!(
                    "connection {}[{}] -> {}[{}] outside sizes {pre_size}/{post_size}",
                    c.pre, c.pre_id, c.post, c.post_id
                )));
            }
            if c.count == 0 {
                return Err(NetlistError::Count(0));
            }
            if !seen.insert((c.pre.as_str(), c.post.as_str(), c.kind, c.pre_id, c.post_id)) {
                return Err(NetlistError::Duplicate(format!(
                    "connection {}[{}] -> {}[{}] {}",
                    c.pre, c.pre_id, c.post, c.post_id, c.kind
                )));
            }
            *fan_in.entry((c.post.as_str(), c.post_id)).or_default() += c.count;
        }
        for pop in &self.populations {
            for j in 0..pop.size {
                let total = fan_in.get(&(pop.name.as_str(), j)).copied().unwrap_or(0);
                if total > self.fan_in_limit as u64 {
                    return Err(NetlistError::FanIn {
                        population: pop.name.clone(),
                        neuron: j,
                        total,
                        limit: self.fan_in_limit,
                    });
                }
            }
        }
        Ok(())
    }

    /// Rebuilds the network with every bias set from its code. The returned
    /// topology carries the parameters of neuron 0 of each population; the
    /// parameters hold the per-neuron values.
    pub fn network(
        &self,
        table: &CalibrationTable,
        consts: &PhysicalConstants,
    ) -> Result<(Topology, NetworkParams), NetlistError> {
        self.validate(table)?;
        let names = bias_names();
        let mut topo = Topology::default();
        for (name, size) in &self.inputs {
            topo.add_input(name, *size);
        }
        let mut neurons = Vec::new();
        let mut synapses = Vec::new();
        for pop in &self.populations {
            let m = &pop.model;
            let mut base = NeuronParams::calibrated_dc(consts);
            base.capacitance = m.capacitance;
            base.refractory = m.refractory;
            base.reset_current = m.reset_current;
            base.ahp.enabled = m.ahp_enabled;
            base.ahp.capacitance = m.ahp_capacitance;
            base.ahp.pulse_width = m.ahp_pulse_width;
            base.feedback.enabled = m.feedback_enabled;
            base.feedback.alpha = m.feedback_alpha;
            base.surrogate = m.surrogate;
            let base_syn = SynapseKind::ALL.map(|k| {
                let mut s = SynapseParams::default_for(k);
                s.capacitance = pop.synapses[k.index()].capacitance;
                s.nmda_gate = pop.synapses[k.index()].nmda_gate;
                s
            });
            let mut pn = Vec::with_capacity(pop.size);
            let mut ps = Vec::with_capacity(pop.size);
            for codes in &pop.biases {
                let (mut n, mut s) = (base, base_syn);
                for (slot, name) in bias_slots(&mut n, &mut s).into_iter().zip(&names) {
                    // validated above, so every lookup succeeds
                    *slot = table.code_to_current(name, codes[name]).map_err(|e| NetlistError::BiasRange {
                        population: pop.name.clone(),
                        neuron: 0,
                        bias: name.clone(),
                        message: e.to_string(),
                    })?;
                }
                n.feedback.i_gain = n.i_gain;
                pn.push(n);
                ps.push(s);
            }
            let (neuron, syn) = match (pn.first(), ps.first()) {
                (Some(n), Some(s)) => (*n, *s),
                _ => (base, base_syn),
            };
            topo.add_population(Population { name: pop.name.clone(), size: pop.size, neuron, synapses: syn });
            neurons.push(pn);
            synapses.push(ps);
        }
        let source = |topo: &Topology, name: &str| -> Source {
            match topo.input_index(name) {
                Some(g) => Source::Input(g),
                None => Source::Population(topo.population_index(name).expect("validated reference")),
            }
        };
        let mut index = HashMap::new();
        for p in &self.projections {
            let pre = source(&topo, &p.pre);
            let post = topo.population_index(&p.post).expect("validated reference");
            let n_pre = topo.source_size(pre);
            let n_post = topo.populations[post].size;
            index.insert((p.pre.as_str(), p.post.as_str(), p.kind), topo.projections.len());
            topo.projections.push(Projection {
                pre,
                post,
                kind: p.kind,
                n_pre,
                n_post,
                weights: vec![0.0; n_pre * n_post],
            });
        }
        for c in &self.connections {
            let pi = index[&(c.pre.as_str(), c.post.as_str(), c.kind)];
            let proj = &mut topo.projections[pi];
            proj.weights[c.post_id * proj.n_pre + c.pre_id] = c.count as f64;
        }
        topo.validate(consts).map_err(|e| NetlistError::Model(e.to_string()))?;
        let weights = topo.projections.iter().map(|p| p.weights.clone()).collect();
        Ok((topo, NetworkParams { neurons, synapses, weights }))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{NETLIST_HEADER}");
        let _ = writeln!(s, "fan_in_limit {}", self.fan_in_limit);
        for (name, size) in &self.inputs {
            let _ = writeln!(s, "input {name} {size}");
        }
        for pop in &self.populations {
            let m = &pop.model;
            let _ = writeln!(s, "population {} {}", pop.name, pop.size);
            let pulse = m.ahp_pulse_width.map_or("step".to_string(), |w| format!("{w:e}"));
            let sg = &m.surrogate;
            let kind = match sg.kind {
                SurrogateKind::Boxcar => "boxcar",
                SurrogateKind::FastSigmoid => "fast_sigmoid",
            };
            let _ = writeln!(
                s,
                "model {} C_mem={:e} refractory={:e} reset={:e} ahp={} C_ahp={:e} ahp_pulse={pulse} feedback={} \
                 alpha={:e} surrogate={kind}:{:e}:{:e}:{}:{}",
                pop.name,
                m.capacitance,
                m.refractory,
                m.reset_current,
                m.ahp_enabled as u8,
                m.ahp_capacitance,
                m.feedback_enabled as u8,
                m.feedback_alpha,
                sg.width,
                sg.slope,
                sg.smooth_forward as u8,
                sg.detach_reset as u8,
            );
            for k in SynapseKind::ALL {
                let sm = &pop.synapses[k.index()];
                let _ = writeln!(
                    s,
                    "synapse {} {} C={:e} gate_threshold={:e} gate_slope={:e} gate_hard={}",
                    pop.name, k, sm.capacitance, sm.nmda_gate.threshold, sm.nmda_gate.slope, sm.nmda_gate.hard as u8
                );
            }
            for (j, codes) in pop.biases.iter().enumerate() {
                let _ = write!(s, "neuron {} {j}", pop.name);
                for name in bias_names() {
                    if let Some(code) = codes.get(&name) {
                        let pa = pop.listed_pa.get(j).and_then(|m| m.get(&name)).copied().unwrap_or(f64::NAN);
                        let _ = write!(s, " {name}={}:{}:{pa:.3}", code.coarse, code.fine);
                    }
                }
                s.push('\n');
            }
        }
        for p in &self.projections {
            let _ = writeln!(s, "projection {} {} {}", p.pre, p.post, p.kind);
        }
        for c in &self.connections {
            let _ = writeln!(s, "connection {} {} {} {} {} {}", c.pre, c.post, c.kind, c.pre_id, c.post_id, c.count);
        }
        s
    }

    /// Parses the text form. Structural checks run in [`Netlist::validate`].
    pub fn parse(text: &str) -> Result<Netlist, NetlistError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        match lines.next() {
            Some((_, l)) if l.trim() == NETLIST_HEADER => {}
            Some((_, l)) => return Err(NetlistError::Version(l.trim().to_string())),
            None => return Err(NetlistError::Version(String::new())),
        }
        let mut net =
            Netlist { fan_in_limit: 0, inputs: vec![], populations: vec![], projections: vec![], connections: vec![] };
        let mut have_limit = false;
        let mut models: HashSet<String> = HashSet::new();
        for (i, raw) in lines {
            let line = i + 1;
            let syntax = |message: String| NetlistError::Syntax { line, message };
            let tok: Vec<&str> = raw.split_whitespace().collect();
            let int = |t: &str| t.parse::<usize>().map_err(|_| syntax(format!("expected an integer, found '{t}'")));
            let kind = |t: &str| t.parse::<SynapseKind>().map_err(syntax);
            let arity = |n: usize| {
                if tok.len() == n {
                    Ok(())
                } else {
                    Err(syntax(format!("'{}' takes {} fields, found {}", tok[0], n - 1, tok.len() - 1)))
                }
            };
            let pop_index = |net: &Netlist, name: &str| {
                net.populations
                    .iter()
                    .position(|p| p.name == name)
                    .ok_or_else(|| NetlistError::Dangling(format!("line {line}: population '{name}' not declared")))
            };
            match tok[0] {
                "fan_in_limit" => {
                    arity(2)?;
                    if have_limit {
                        return Err(NetlistError::Duplicate("fan_in_limit".into()));
                    }
                    net.fan_in_limit = int(tok[1])?;
                    have_limit = true;
                }
                "input" => {
                    arity(3)?;
                    net.inputs.push((tok[1].to_string(), int(tok[2])?));
                }
                "population" => {
                    arity(3)?;
                    let size = int(tok[2])?;
                    net.populations.push(NetlistPopulation {
                        name: tok[1].to_string(),
                        size,
                        model: NeuronModel {
                            capacitance: 0.0,
                            refractory: 0.0,
                            reset_current: 0.0,
                            ahp_enabled: false,
                            ahp_capacitance: 0.0,
                            ahp_pulse_width: None,
                            feedback_enabled: false,
                            feedback_alpha: 0.0,
                            surrogate: SurrogateSpec::default_for_threshold(1.0),
                        },
                        synapses: [SynapseModel { capacitance: 0.0, nmda_gate: NmdaGate::default() }; 4],
                        biases: Vec::new(),
                        listed_pa: Vec::new(),
                    });
                }
                "model" => {
                    if tok.len() < 2 {
                        return Err(syntax("model needs a population".into()));
                    }
                    let p = pop_index(&net, tok[1])?;
                    if !models.insert(tok[1].to_string()) {
                        return Err(NetlistError::Duplicate(format!("model of '{}'", tok[1])));
                    }
                    let kv = key_values(&tok[2..]).map_err(syntax)?;
                    net.populations[p].model = parse_model(&kv).map_err(syntax)?;
                }
                "synapse" => {
                    if tok.len() < 3 {
                        return Err(syntax("synapse needs a population and a kind".into()));
                    }
                    let p = pop_index(&net, tok[1])?;
                    let k = kind(tok[2])?;
                    let kv = key_values(&tok[3..]).map_err(syntax)?;
                    let f = |key: &str| get_f64(&kv, key).map_err(syntax);
                    net.populations[p].synapses[k.index()] = SynapseModel {
                        capacitance: f("C")?,
                        nmda_gate: NmdaGate {
                            threshold: f("gate_threshold")?,
                            slope: f("gate_slope")?,
                            hard: get_bool(&kv, "gate_hard").map_err(syntax)?,
                        },
                    };
                }
                "neuron" => {
                    if tok.len() < 3 {
                        return Err(syntax("neuron needs a population and an id".into()));
                    }
                    let p = pop_index(&net, tok[1])?;
                    let j = int(tok[2])?;
                    let pop = &mut net.populations[p];
                    if j != pop.biases.len() {
                        return Err(if j < pop.biases.len() {
                            NetlistError::Duplicate(format!("neuron {}[{j}]", pop.name))
                        } else if j >= pop.size {
                            NetlistError::Dangling(format!(
                                "line {line}: neuron {}[{j}] beyond size {}",
                                pop.name, pop.size
                            ))
                        } else {
                            syntax(format!("neuron ids must be listed in order, expected {}", pop.biases.len()))
                        });
                    }
                    if j >= pop.size {
                        return Err(NetlistError::Dangling(format!(
                            "line {line}: neuron {}[{j}] beyond size {}",
                            pop.name, pop.size
                        )));
                    }
                    let mut codes = BTreeMap::new();
                    let mut listed = BTreeMap::new();
                    for t in &tok[3..] {
                        let (name, rest) = t.split_once('=').ok_or_else(|| syntax(format!("bad bias entry '{t}'")))?;
                        let parts: Vec<&str> = rest.split(':').collect();
                        if parts.len() != 3 {
                            return Err(syntax(format!("bias entry '{t}' is not coarse:fine:pA")));
                        }
                        let coarse: i64 = parts[0].parse().map_err(|_| syntax(format!("bad coarse in '{t}'")))?;
                        let fine: i64 = parts[1].parse().map_err(|_| syntax(format!("bad fine in '{t}'")))?;
                        let pa: f64 = parts[2].parse().map_err(|_| syntax(format!("bad current in '{t}'")))?;
                        let code = BiasCode::new(coarse, fine).map_err(|e| NetlistError::BiasRange {
                            population: pop.name.clone(),
                            neuron: j,
                            bias: name.to_string(),
                            message: e.to_string(),
                        })?;
                        if codes.insert(name.to_string(), code).is_some() {
                            return Err(NetlistError::Duplicate(format!("bias {name} of {}[{j}]", pop.name)));
                        }
                        listed.insert(name.to_string(), pa);
                    }
                    pop.biases.push(codes);
                    pop.listed_pa.push(listed);
                }
                "projection" => {
                    arity(4)?;
                    net.projections.push(NetlistProjection {
                        pre: tok[1].to_string(),
                        post: tok[2].to_string(),
                        kind: kind(tok[3])?,
                    });
                }
                "connection" => {
                    arity(7)?;
                    let count: u64 = tok[6].parse().map_err(|_| syntax(format!("bad count '{}'", tok[6])))?;
                    net.connections.push(Connection {
                        pre: tok[1].to_string(),
                        post: tok[2].to_string(),
                        kind: kind(tok[3])?,
                        pre_id: int(tok[4])?,
                        post_id: int(tok[5])?,
                        count,
                    });
                }
                other => return Err(syntax(format!("unknown record '{other}'"))),
            }
        }
        if !have_limit {
            return Err(NetlistError::Syntax { line: 1, message: "missing fan_in_limit".into() });
        }
        if let Some(p) = net.populations.iter().find(|p| !models.contains(&p.name)) {
            return Err(NetlistError::Syntax { line: 1, message: format!("population '{}' has no model", p.name) });
        }
        Ok(net)
    }

    /// Parses, validates and rebuilds the network in one go.
    pub fn import(
        text: &str,
        table: &CalibrationTable,
        consts: &PhysicalConstants,
    ) -> Result<(Topology, NetworkParams), NetlistError> {
        Netlist::parse(text)?.network(table, consts)
    }
}

fn round_pa(current: f64) -> f64 {
    (current / PICO * 1000.0).round() / 1000.0
}

fn key_values<'a>(tok: &[&'a str]) -> Result<HashMap<&'a str, &'a str>, String> {
    let mut kv = HashMap::new();
    for t in tok {
        let (k, v) = t.split_once('=').ok_or_else(|| format!("expected key=value, found '{t}'"))?;
        if kv.insert(k, v).is_some() {
            return Err(format!("key '{k}' repeated"));
        }
    }
    Ok(kv)
}

fn get<'a>(kv: &HashMap<&str, &'a str>, key: &str) -> Result<&'a str, String> {
    kv.get(key).copied().ok_or_else(|| format!("missing '{key}'"))
}

fn get_f64(kv: &HashMap<&str, &str>, key: &str) -> Result<f64, String> {
    let v = get(kv, key)?;
    v.parse().map_err(|_| format!("'{key}' is not a number: '{v}'"))
}

fn get_bool(kv: &HashMap<&str, &str>, key: &str) -> Result<bool, String> {
    match get(kv, key)? {
        "0" => Ok(false),
        "1" => Ok(true),
        v => Err(format!("'{key}' must be 0 or 1, found '{v}'")),
    }
}

fn parse_model(kv: &HashMap<&str, &str>) -> Result<NeuronModel, String> {
    const KEYS: [&str; 9] =
        ["C_mem", "refractory", "reset", "ahp", "C_ahp", "ahp_pulse", "feedback", "alpha", "surrogate"];
    if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
        return Err(format!("unknown model key '{k}'"));
    }
    let pulse = match get(kv, "ahp_pulse")? {
        "step" => None,
        v => Some(v.parse().map_err(|_| format!("bad ahp_pulse '{v}'"))?),
    };
    let sg = get(kv, "surrogate")?;
    let parts: Vec<&str> = sg.split(':').collect();
    if parts.len() != 5 {
        return Err(format!("surrogate '{sg}' is not kind:width:slope:smooth:detach"));
    }
    let kind = match parts[0] {
        "boxcar" => SurrogateKind::Boxcar,
        "fast_sigmoid" => SurrogateKind::FastSigmoid,
        k => return Err(format!("unknown surrogate '{k}'")),
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad surrogate field '{s}'"));
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("bad surrogate flag '{s}'")),
    };
    Ok(NeuronModel {
        capacitance: get_f64(kv, "C_mem")?,
        refractory: get_f64(kv, "refractory")?,
        reset_current: get_f64(kv, "reset")?,
        ahp_enabled: get_bool(kv, "ahp")?,
        ahp_capacitance: get_f64(kv, "C_ahp")?,
        ahp_pulse_width: pulse,
        feedback_enabled: get_bool(kv, "feedback")?,
        feedback_alpha: get_f64(kv, "alpha")?,
        surrogate: SurrogateSpec {
            kind,
            width: num(parts[1])?,
            slope: num(parts[2])?,
            smooth_forward: flag(parts[3])?,
            detach_reset: flag(parts[4])?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{encode_poisson, simulate_params, RecordFlags};
    use proptest::prelude::*;

    fn small(consts: &PhysicalConstants) -> Topology {
        let mut n = NeuronParams::calibrated_dc(consts);
        n.i_dc = 3.0 * PICO;
        let mut t = Topology::default();
        let inp = t.add_input("in", 6);
        let a = t.add_population(Population::new("a", 3, n));
        let b = t.add_population(Population::new("b", 2, n));
        t.connect(inp, a, SynapseKind::Ampa, 0.0);
        t.connect(Source::Population(a), b, SynapseKind::GabaA, 0.0);
        t.connect(inp, b, SynapseKind::Nmda, 0.0);
        let counts = [[3.0, 0.0, 1.0, 2.0, 0.0, 5.0], [0.0, 4.0, 0.0, 0.0, 2.0, 1.0], [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]];
        for (j, row) in counts.iter().enumerate() {
            t.projections[0].weights[j * 6..(j + 1) * 6].copy_from_slice(row);
        }
        t.projections[1].weights = vec![2.0, 0.0, 1.0, 0.0, 3.0, 0.0];
        t
    }

    #[test]
    fn round_trip_rebuilds_the_deployed_network() {
        let c = PhysicalConstants::default();
        let table = CalibrationTable::builtin();
        let topo = small(&c);
        let deployed = deployed_network(&topo, &table).unwrap();
        let text = Netlist::export(&topo, &table, 64).unwrap().to_text();
        assert!(text.starts_with("dpi-netlist v1\nfan_in_limit 64\n"));
        let (back, params) = Netlist::import(&text, &table, &c).unwrap();
        assert_eq!(back, deployed);
        assert_eq!(params, NetworkParams::nominal(&deployed));
        assert_eq!(Netlist::parse(&text).unwrap().to_text(), text);

        let input = encode_poisson(&[0.9; 6], 100.0, 0.5, 1e-4, 3).unwrap();
        let a = simulate_params(&deployed, NetworkParams::nominal(&deployed), &input, 1e-4, &c, RecordFlags::default())
            .unwrap();
        let b = simulate_params(&back, params, &input, 1e-4, &c, RecordFlags::default()).unwrap();
        assert!(!a.spikes.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn export_rejects_undeployable_networks() {
        let c = PhysicalConstants::default();
        let table = CalibrationTable::builtin();
        let mut t = small(&c);
        t.projections[0].weights[0] = 1.5;
        assert_eq!(Netlist::export(&t, &table, 64).unwrap_err().code(), 50);
        let t = small(&c);
        assert_eq!(Netlist::export(&t, &table, 5).unwrap_err().code(), 20);
        let mut t = small(&c);
        t.populations[0].neuron.i_tau = 1e-6;
        assert_eq!(Netlist::export(&t, &table, 64).unwrap_err().code(), 30);
        let mut t = small(&c);
        t.populations[0].neuron.feedback.i_gain *= 2.0;
        assert_eq!(Netlist::export(&t, &table, 64).unwrap_err().code(), 51);
    }

    fn corrupt(text: &str, from: &str, to: &str) -> u32 {
        assert!(text.contains(from), "{from}");
        let bad = text.replacen(from, to, 1);
        let c = PhysicalConstants::default();
        Netlist::import(&bad, &CalibrationTable::builtin(), &c).unwrap_err().code()
    }

    #[test]
    fn hand_corrupted_files_get_specific_codes() {
        let c = PhysicalConstants::default();
        let table = CalibrationTable::builtin();
        let text = Netlist::export(&small(&c), &table, 64).unwrap().to_text();
        assert_eq!(corrupt(&text, "dpi-netlist v1", "dpi-netlist v2"), 11);
        assert_eq!(corrupt(&text, "fan_in_limit 64", "fan_in_limit 6"), 20);
        assert_eq!(corrupt(&text, "connection in a AMPA 5 0 5", "connection in a AMPA 5 0 60"), 20);
        assert_eq!(corrupt(&text, "IF_TAU=6:22:4.100", "IF_TAU=6:255:4.100"), 32);
        assert_eq!(corrupt(&text, "IF_TAU=6:22:4.100", "IF_TAU=3:22:4.100"), 30);
        assert_eq!(corrupt(&text, "IF_TAU=6:22:4.100", "IF_TAU=9:22:4.100"), 30);
        assert_eq!(corrupt(&text, "IF_TAU=6:22:4.100", "IF_TAUX=6:22:4.100"), 31);
        assert_eq!(corrupt(&text, "connection in a AMPA 5 0 5", "connection in a AMPA 9 0 5"), 40);
        assert_eq!(corrupt(&text, "connection in a AMPA 5 0 5", "connection in c AMPA 5 0 5"), 40);
        assert_eq!(corrupt(&text, "connection in a AMPA 5 0 5", "connection in a GABA_B 5 0 5"), 40);
        assert_eq!(corrupt(&text, "connection in a AMPA 5 0 5", "connection in a AMPA 5 0 0"), 41);
        assert_eq!(corrupt(&text, "connection in a AMPA 5 0 5", "connection in a AMPA 0 0 5"), 12);
        assert_eq!(corrupt(&text, "neuron a 1 ", "neuron a 0 "), 12);
        assert_eq!(corrupt(&text, "connection in a AMPA 5 0 5", "connection in a AMPA 5 0"), 10);
        assert_eq!(corrupt(&text, "ahp=1", "ahp=yes"), 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn exported_counts_equal_integer_weights(counts in prop::collection::vec(0u8..6, 18)) {
            let c = PhysicalConstants::default();
            let table = CalibrationTable::builtin();
            let mut t = small(&c);
            t.projections[0].weights = counts.iter().map(|&x| x as f64).collect();
            let net = Netlist::export(&t, &table, 64).unwrap();
            let (back, _) = net.network(&table, &c).unwrap();
            prop_assert_eq!(&back.projections[0].weights, &t.projections[0].weights);
            prop_assert!(net.connections.iter().all(|c| c.count >= 1));
        }
    }
}
