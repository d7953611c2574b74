use crate::dpi_core::{NeuronParams, PhysicalConstants, SynapseKind, SynapseParams};

use super::NetworkError;

/// A named block of external spike channels (stimulus pixels, teachers).
#[derive(Clone, Debug, PartialEq)]
pub struct InputGroup {
    pub name: String,
    pub size: usize,
}

/// A population of identical neurons sharing one bias set per core.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub name: String,
    pub size: usize,
    pub neuron: NeuronParams,
    /// Shared synapse parameters, indexed by [`SynapseKind::index`].
    pub synapses: [SynapseParams; 4],
}

impl Population {
    pub fn new(name: &str, size: usize, neuron: NeuronParams) -> Self {
        Population { name: name.to_string(), size, neuron, synapses: SynapseKind::ALL.map(SynapseParams::default_for) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Input(usize),
    Population(usize),
}

/// Dense `post × pre` weight matrix of one synapse kind.
///
/// Entries scale the base synaptic drive: a real value during training, an
/// integer synapse count after deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub pre: Source,
    pub post: usize,
    pub kind: SynapseKind,
    pub n_pre: usize,
    pub n_post: usize,
    pub weights: Vec<f64>,
}

impl Projection {
    pub fn weight(&self, post: usize, pre: usize) -> f64 {
        self.weights[post * self.n_pre + pre]
    }

    pub fn row(&self, post: usize) -> &[f64] {
        &self.weights[post * self.n_pre..(post + 1) * self.n_pre]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks(self.n_pre.max(1))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Topology {
    pub inputs: Vec<InputGroup>,
    pub populations: Vec<Population>,
    pub projections: Vec<Projection>,
}

impl Topology {
    pub fn add_input(&mut self, name: &str, size: usize) -> Source {
        self.inputs.push(InputGroup { name: name.to_string(), size });
        Source::Input(self.inputs.len() - 1)
    }

    pub fn add_population(&mut self, pop: Population) -> usize {
        self.populations.push(pop);
        self.populations.len() - 1
    }

    /// Adds a projection with all weights set to `init`; returns its index.
    pub fn connect(&mut self, pre: Source, post: usize, kind: SynapseKind, init: f64) -> usize {
        let n_pre = self.source_size(pre);
        let n_post = self.populations[post].size;
        self.projections.push(Projection { pre, post, kind, n_pre, n_post, weights: vec![init; n_pre * n_post] });
        self.projections.len() - 1
    }

    pub fn source_size(&self, src: Source) -> usize {
        match src {
            Source::Input(g) => self.inputs[g].size,
            Source::Population(p) => self.populations[p].size,
        }
    }

    /// Total external channel count.
    pub fn n_inputs(&self) -> usize {
        self.inputs.iter().map(|g| g.size).sum()
    }

    /// First channel of input group `g` in the concatenated input vector.
    pub fn input_offset(&self, g: usize) -> usize {
        self.inputs[..g].iter().map(|g| g.size).sum()
    }

    pub fn n_neurons(&self) -> usize {
        self.populations.iter().map(|p| p.size).sum()
    }

    /// Global id of the first neuron of population `p`.
    pub fn neuron_offset(&self, p: usize) -> usize {
        self.populations[..p].iter().map(|p| p.size).sum()
    }

    pub fn population_index(&self, name: &str) -> Option<usize> {
        self.populations.iter().position(|p| p.name == name)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|g| g.name == name)
    }

    /// Total incoming weight of each neuron of population `post`, summed
    /// over all kinds and sources.
    pub fn fan_in(&self, post: usize) -> Vec<f64> {
        let mut totals = vec![0.0; self.populations[post].size];
        for proj in self.projections.iter().filter(|p| p.post == post) {
            for (j, row) in proj.rows().enumerate() {
                totals[j] += row.iter().sum::<f64>();
            }
        }
        totals
    }

    pub fn validate(&self, consts: &PhysicalConstants) -> Result<(), NetworkError> {
        let mut names = std::collections::HashSet::new();
        for g in &self.inputs {
            if !names.insert(g.name.as_str()) {
                return Err(NetworkError::Shape(format!("duplicate name '{}'", g.name)));
            }
        }
        for p in &self.populations {
            if !names.insert(p.name.as_str()) {
                return Err(NetworkError::Shape(format!("duplicate name '{}'", p.name)));
            }
            p.neuron.validate(consts)?;
            for (k, s) in p.synapses.iter().enumerate() {
                if s.kind.index() != k {
                    return Err(NetworkError::Shape(format!(
                        "population '{}': synapse slot {k} holds {}",
                        p.name, s.kind
                    )));
                }
                s.validate(consts)?;
            }
        }
        for (i, proj) in self.projections.iter().enumerate() {
            let pre_ok = match proj.pre {
                Source::Input(g) => g < self.inputs.len(),
                Source::Population(p) => p < self.populations.len(),
            };
            if !pre_ok || proj.post >= self.populations.len() {
                return Err(NetworkError::Shape(format!("projection {i} references a missing source or target")));
            }
            if proj.n_pre != self.source_size(proj.pre)
                || proj.n_post != self.populations[proj.post].size
                || proj.weights.len() != proj.n_pre * proj.n_post
            {
                return Err(NetworkError::Shape(format!("projection {i} has inconsistent dimensions")));
            }
            if let Some(w) = proj.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
                return Err(NetworkError::Shape(format!("projection {i} has invalid weight {w}")));
            }
        }
        Ok(())
    }

    /// True when every weight is a non-negative integer and no neuron's
    /// total count exceeds `fan_in_limit`.
    pub fn is_deployable(&self, fan_in_limit: usize) -> bool {
        let integral = self.projections.iter().all(|p| p.weights.iter().all(|w| *w >= 0.0 && w.fract() == 0.0));
        integral && (0..self.populations.len()).all(|p| self.fan_in(p).iter().all(|&s| s <= fan_in_limit as f64))
    }
}
