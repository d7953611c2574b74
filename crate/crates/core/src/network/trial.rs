use serde::{Deserialize, Serialize};

use super::{encode_poisson, simulate_params, NetworkError, NetworkParams, RecordFlags, Sample, SpikeTrain, Topology};
use crate::dpi_core::PhysicalConstants;

/// Stimulus/rest presentation of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialProtocol {
    /// Stimulus window (s).
    pub stim: f64,
    /// Silent window after the stimulus (s).
    pub rest: f64,
    /// Rate of a full-intensity channel (Hz).
    pub max_rate: f64,
    pub dt: f64,
}

impl Default for TrialProtocol {
    fn default() -> Self {
        TrialProtocol { stim: 0.05, rest: 0.05, max_rate: 100.0, dt: 1e-4 }
    }
}

impl TrialProtocol {
    pub fn stim_steps(&self) -> usize {
        (self.stim / self.dt).round() as usize
    }

    pub fn rest_steps(&self) -> usize {
        (self.rest / self.dt).round() as usize
    }

    /// Poisson stimulus followed by silence.
    pub fn input(&self, values: &[f64], seed: u64) -> Result<SpikeTrain, NetworkError> {
        let mut train = encode_poisson(values, self.max_rate, self.stim_steps() as f64 * self.dt, self.dt, seed)?;
        train.extend(&SpikeTrain::silent(values.len(), self.rest_steps()))?;
        Ok(train)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialResult {
    pub stim_counts: Vec<usize>,
    pub rest_counts: Vec<usize>,
    pub predicted: usize,
}

/// Readout neuron with the largest stimulus-minus-rest count; ties go to
/// the lowest id.
pub fn predict(stim_counts: &[usize], rest_counts: &[usize]) -> usize {
    let mut best = 0;
    let mut best_score = i64::MIN;
    for (i, (&s, &r)) in stim_counts.iter().zip(rest_counts).enumerate() {
        let score = s as i64 - r as i64;
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Presents `sample` to the network and classifies it from population
/// `readout`.
pub fn run_classification_trial(
    topo: &Topology,
    params: &NetworkParams,
    readout: usize,
    sample: &Sample,
    protocol: &TrialProtocol,
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<TrialResult, NetworkError> {
    let size = topo.populations.get(readout).map(|p| p.size).unwrap_or(0);
    if size < 2 {
        return Err(NetworkError::Shape("classification needs at least two readout neurons".into()));
    }
    let input = protocol.input(&sample.values, seed)?;
    let out = simulate_params(topo, params.clone(), &input, protocol.dt, consts, RecordFlags::default())?;
    let stim = protocol.stim_steps();
    let stim_counts = out.counts(readout, size, 0, stim);
    let rest_counts = out.counts(readout, size, stim, input.steps);
    let predicted = predict(&stim_counts, &rest_counts);
    Ok(TrialResult { stim_counts, rest_counts, predicted })
}
