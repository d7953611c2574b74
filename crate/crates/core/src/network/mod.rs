//! Populations, projections, input encoding and the time-stepped network
//! simulation.

mod data;
mod encoder;
mod engine;
mod topology;
mod trial;

pub use data::{load_csv_dir, load_idx, parse_idx_images, parse_idx_labels, preprocess, Sample};
pub use encoder::{encode_poisson, PoissonEncoder, SpikeTrain};
pub use engine::{
    simulate, simulate_params, spikes_csv, traces_csv, traces_csv_header, NetworkParams, RecordFlags, SimOutput,
    Simulation, SpikeEvent, Traces, SPIKE_CSV_HEADER,
};
pub use topology::{InputGroup, Population, Projection, Source, Topology};
pub use trial::{predict, run_classification_trial, TrialProtocol, TrialResult};

use thiserror::Error;

use crate::dpi_core::DpiError;
use crate::hw_model::HwError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("rate {rate} Hz is undersampled at dt = {dt} s")]
    Undersampled { rate: f64, dt: f64 },
    #[error(transparent)]
    Dpi(#[from] DpiError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpi_core::{NeuronParams, PhysicalConstants, SynapseKind, PICO};
    use crate::hw_model::MismatchSpec;

    fn one_to_one(kind: SynapseKind, i_dc: f64) -> Topology {
        let c = PhysicalConstants::default();
        let mut n = NeuronParams::calibrated_dc(&c);
        n.i_dc = i_dc;
        let mut t = Topology::default();
        let inp = t.add_input("in", 1);
        let out = t.add_population(Population::new("out", 1, n));
        t.connect(inp, out, kind, 1.0);
        t
    }

    fn rate(out: &SimOutput) -> f64 {
        out.spikes.len() as f64 / (out.steps as f64 * out.dt)
    }

    #[test]
    fn silent_network_stays_silent() {
        let c = PhysicalConstants::default();
        let t = one_to_one(SynapseKind::Ampa, c.dark_current);
        let out = simulate(&t, &SpikeTrain::silent(1, 5000), 1e-4, &c, RecordFlags::default(), None).unwrap();
        assert!(out.spikes.is_empty());
        assert_eq!(spikes_csv(&t, &out), "time_s,population,neuron_id\n");
    }

    #[test]
    fn single_ampa_spike_matches_closed_form() {
        let c = PhysicalConstants::default();
        let mut t = one_to_one(SynapseKind::Ampa, c.dark_current);
        t.projections[0].weights[0] = 6.0;
        let dt = 1e-4;
        let mut input = SpikeTrain::silent(1, 2000);
        input.set(10, 0, true);
        let rec = RecordFlags { traces: true, trace_every: 1 };
        let out = simulate(&t, &input, dt, &c, rec, None).unwrap();
        let tr = out.traces.as_ref().unwrap();
        let syn = &t.populations[0].synapses[0];
        let tau = syn.tau(&c);
        let iss = 6.0 * syn.amplitude();
        let peak = iss + (c.dark_current - iss) * (-dt / tau).exp();
        for (r, &step) in tr.steps.iter().enumerate() {
            let got = tr.i_syn[r][0][0];
            let want = if step < 10 {
                c.dark_current
            } else {
                (peak * (-((step - 10) as f64) * dt / tau).exp()).max(c.dark_current)
            };
            assert!((got - want).abs() <= 1e-9 * want, "step {step}: {got} vs {want}");
        }
        let mem: Vec<f64> = tr.i_mem.iter().map(|v| v[0]).collect();
        let (argmax, &max) = mem.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!(argmax > 10 && max > 2.0 * mem[5]);
        assert!(*mem.last().unwrap() < 0.5 * max);
        assert!(out.spikes.is_empty());
        assert!(traces_csv(&out).starts_with(
            "time_s,neuron_id,I_mem_pA,I_ahp_pA,I_syn_AMPA_pA,I_syn_NMDA_pA,I_syn_GABA_A_pA,I_syn_GABA_B_pA\n"
        ));
    }

    #[test]
    fn gaba_a_lowers_rate() {
        let c = PhysicalConstants::default();
        let input = encode_poisson(&[1.0], 100.0, 2.0, 1e-4, 4).unwrap();
        let dc = 36.6 * PICO;
        let mut none = one_to_one(SynapseKind::GabaA, dc);
        none.projections[0].weights[0] = 0.0;
        let free = simulate(&none, &input, 1e-4, &c, RecordFlags::default(), None).unwrap();
        let inh =
            simulate(&one_to_one(SynapseKind::GabaA, dc), &input, 1e-4, &c, RecordFlags::default(), None).unwrap();
        let gb = simulate(&one_to_one(SynapseKind::GabaB, dc), &input, 1e-4, &c, RecordFlags::default(), None).unwrap();
        assert!(rate(&free) > 10.0);
        assert!(rate(&inh) < rate(&free), "{} vs {}", rate(&inh), rate(&free));
        assert!(rate(&gb) < rate(&free));
    }

    fn small_net(weight: f64) -> Topology {
        let c = PhysicalConstants::default();
        let mut n = NeuronParams::calibrated_dc(&c);
        n.i_dc = 5.0 * PICO;
        let mut t = Topology::default();
        let inp = t.add_input("in", 8);
        let a = t.add_population(Population::new("a", 3, n));
        let b = t.add_population(Population::new("b", 2, n));
        t.connect(inp, a, SynapseKind::Ampa, weight);
        t.connect(Source::Population(a), b, SynapseKind::Ampa, weight);
        t.connect(inp, b, SynapseKind::Nmda, 0.5);
        t
    }

    #[test]
    fn deterministic_and_observation_free() {
        let c = PhysicalConstants::default();
        let t = small_net(2.0);
        let input = encode_poisson(&[0.8; 8], 100.0, 1.0, 1e-4, 1).unwrap();
        let spec = MismatchSpec { cv: 0.2, seed: 3, ..Default::default() };
        let a = simulate(&t, &input, 1e-4, &c, RecordFlags::default(), Some(&spec)).unwrap();
        let b = simulate(&t, &input, 1e-4, &c, RecordFlags { traces: true, trace_every: 7 }, Some(&spec)).unwrap();
        assert!(!a.spikes.is_empty());
        assert_eq!(a.spikes, b.spikes);
        let again = simulate(&t, &input, 1e-4, &c, RecordFlags::default(), Some(&spec)).unwrap();
        assert_eq!(spikes_csv(&t, &a), spikes_csv(&t, &again));
        for w in a.spikes.windows(2) {
            assert!((w[0].step, w[0].population, w[0].neuron) < (w[1].step, w[1].population, w[1].neuron));
        }
    }

    #[test]
    fn more_excitation_never_lowers_rates() {
        let c = PhysicalConstants::default();
        let input = encode_poisson(&[0.6; 8], 100.0, 1.0, 1e-4, 8).unwrap();
        let lo = small_net(2.0);
        let hi = small_net(4.0);
        let a = simulate(&lo, &input, 1e-4, &c, RecordFlags::default(), None).unwrap();
        let b = simulate(&hi, &input, 1e-4, &c, RecordFlags::default(), None).unwrap();
        for p in 0..2 {
            let size = lo.populations[p].size;
            let ca = a.counts(p, size, 0, a.steps);
            let cb = b.counts(p, size, 0, b.steps);
            for (x, y) in ca.iter().zip(&cb) {
                assert!(y >= x, "pop {p}: {ca:?} -> {cb:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let c = PhysicalConstants::default();
        let t = small_net(1.0);
        assert!(matches!(
            simulate(&t, &SpikeTrain::silent(3, 10), 1e-4, &c, RecordFlags::default(), None),
            Err(NetworkError::Shape(_))
        ));
        let mut bad = t.clone();
        bad.projections[0].weights.pop();
        assert!(bad.validate(&c).is_err());
        let mut neg = t.clone();
        neg.projections[0].weights[0] = -1.0;
        assert!(neg.validate(&c).is_err());
    }
}
