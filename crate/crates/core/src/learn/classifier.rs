use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    class_margin_loss, fake_quantize_forward, fanin_final_adjust, fanin_regularizer, prune_to_fanin, Adam, AdamConfig,
    HistoryRow, LearnError, QatSpec, RegSpec,
};
use crate::autodiff::{SurrogateSpec, Tape, Var};
use crate::dpi_core::{NeuronParams, PhysicalConstants, SynapseKind, PICO};
use crate::network::{
    run_classification_trial, NetworkParams, Population, Sample, Simulation, Topology, TrialProtocol,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Images are pooled and padded to `side × side` input channels.
    pub side: usize,
    /// Dataset labels mapped, in order, to readout neurons.
    pub classes: Vec<usize>,
    pub protocol: TrialProtocol,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Required spike-count lead of the correct readout neuron.
    pub margin: f64,
    /// Initial weights are uniform in this range (synapse counts).
    pub init_range: [f64; 2],
    pub qat: QatSpec,
    /// Width of the fast-sigmoid surrogate (pA).
    pub surrogate_width_pa: f64,
    /// Train on at most this many samples (all when absent).
    #[serde(default)]
    pub max_train: Option<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            side: 16,
            classes: vec![0, 1],
            protocol: TrialProtocol::default(),
            epochs: 5,
            batch_size: 32,
            optimizer: AdamConfig::with_lr(0.05),
            margin: 4.0,
            init_range: [0.0, 2.0],
            qat: QatSpec {
                enabled: true,
                fan_in_limit: 64,
                reg: RegSpec { l1_lambda: 0.2, l2_lambda: 0.0, target_fanin: 64.0, per_weight: false },
            },
            surrogate_width_pa: 500.0,
            max_train: None,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let [lo, hi] = self.init_range;
        if self.side == 0 || self.classes.len() < 2 || self.batch_size == 0 {
            return Err(LearnError::Config("classifier needs a positive side, batch size and two classes".into()));
        }
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(LearnError::Config(format!("init_range {:?} must satisfy 0 <= lo <= hi", self.init_range)));
        }
        if !(self.margin >= 0.0 && self.surrogate_width_pa > 0.0 && self.protocol.dt > 0.0) {
            return Err(LearnError::Config("margin, surrogate width and dt must be positive".into()));
        }
        self.optimizer.validate()?;
        self.qat.validate()
    }

    pub fn n_inputs(&self) -> usize {
        self.side * self.side
    }

    /// Readout neuron: no bias current and no adaptation, so activity is
    /// driven entirely by the stimulus.
    pub fn neuron(&self, consts: &PhysicalConstants) -> NeuronParams {
        let mut n = NeuronParams::calibrated_dc(consts);
        n.i_dc = consts.dark_current;
        n.ahp.enabled = false;
        let mut s = SurrogateSpec::fast_sigmoid(1.0 / (self.surrogate_width_pa * PICO)).expect("validated width");
        s.detach_reset = true;
        n.surrogate = s;
        n
    }

    fn label_index(&self, label: usize) -> Result<usize, LearnError> {
        self.classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| LearnError::Config(format!("label {label} is not one of {:?}", self.classes)))
    }
}

/// Input layer fully connected to the readout through an excitatory (AMPA)
/// and an inhibitory (GABA_A) projection. Projection 0 is AMPA, 1 is GABA_A.
pub fn classifier_topology(cfg: &ClassifierConfig, consts: &PhysicalConstants) -> Topology {
    let mut t = Topology::default();
    let inp = t.add_input("pixels", cfg.n_inputs());
    let mut pop = Population::new("readout", cfg.classes.len(), cfg.neuron(consts));
    // four times the default charge per input spike, so a handful of
    // synapses per active pixel is enough to drive the readout
    for k in [SynapseKind::Ampa, SynapseKind::GabaA] {
        let s = &mut pop.synapses[k.index()];
        s.i_gain = 100.0 * PICO;
        s.i_tau = 5.0 * PICO;
    }
    let out = t.add_population(pop);
    t.connect(inp, out, SynapseKind::Ampa, 0.0);
    t.connect(inp, out, SynapseKind::GabaA, 0.0);
    t
}

/// Trained weights of both projections, `[projection][post * n_pre + pre]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub weights: Vec<Vec<f64>>,
    pub history: Vec<HistoryRow>,
}

impl ClassifierModel {
    /// What the network sees during training: rounded weights (or the raw
    /// ones without QAT).
    pub fn training_weights(&self) -> Vec<Vec<f64>> {
        if self.config.qat.enabled {
            self.weights.iter().map(|w| fake_quantize_forward(w).into_iter().map(|x| x.max(0.0)).collect()).collect()
        } else {
            self.weights.clone()
        }
    }

    /// Integer synapse counts under the fan-in limit.
    pub fn deployed_weights(&self) -> Result<Vec<Vec<f64>>, LearnError> {
        deploy(&self.weights, self.config.n_inputs(), self.config.qat.fan_in_limit)
    }
}

/// Splits each readout neuron's incoming weights (all projections
/// concatenated) into rows, applies the final fan-in adjustment and pruning,
/// and reassembles the projections.
pub fn deploy(weights: &[Vec<f64>], n_pre: usize, fan_in_limit: usize) -> Result<Vec<Vec<f64>>, LearnError> {
    let n_post = weights.first().map_or(0, |w| w.len() / n_pre.max(1));
    let rows: Vec<Vec<f64>> = (0..n_post)
        .map(|j| weights.iter().flat_map(|w| w[j * n_pre..(j + 1) * n_pre].iter().copied()).collect())
        .collect();
    let adjusted = prune_to_fanin(&fanin_final_adjust(&rows, fan_in_limit)?, fan_in_limit);
    let mut out = vec![vec![0.0; n_pre * n_post]; weights.len()];
    for (j, row) in adjusted.iter().enumerate() {
        for (k, chunk) in row.chunks(n_pre).enumerate() {
            for (i, &c) in chunk.iter().enumerate() {
                out[k][j * n_pre + i] = c as f64;
            }
        }
    }
    Ok(out)
}

fn trial_seed(seed: u64, epoch: u64, index: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Loss and per-projection weight gradient.
type SampleGradient = (f64, Vec<Vec<f64>>);

/// Loss and weight gradient of one sample over the stimulus window.
fn sample_gradient(
    cfg: &ClassifierConfig,
    topo: &Topology,
    base: &NetworkParams,
    weights: &[Vec<f64>],
    sample: &Sample,
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<SampleGradient, LearnError> {
    let label = cfg.label_index(sample.label)?;
    let protocol = &cfg.protocol;
    let input = crate::network::encode_poisson(
        &sample.values,
        protocol.max_rate,
        protocol.stim_steps() as f64 * protocol.dt,
        protocol.dt,
        seed,
    )?;
    let tape = Tape::with_capacity(protocol.stim_steps() * 200);
    let vars: Vec<Vec<Var>> = weights.iter().map(|w| w.iter().map(|&x| tape.var(x)).collect()).collect();
    let mut params = base.lift::<Var>();
    params.weights =
        if cfg.qat.enabled { vars.iter().map(|w| fake_quantize_forward(w)).collect() } else { vars.clone() };
    let mut sim = Simulation::new(topo, params, *consts, protocol.dt)?;
    let n_out = cfg.classes.len();
    let mut terms: Vec<Vec<(Var, f64)>> = vec![Vec::new(); n_out];
    for step in 0..input.steps {
        sim.step(input.at(step))?;
        for (j, &s) in sim.spikes(0).iter().enumerate() {
            if !s.is_constant() {
                terms[j].push((s, 1.0));
            }
        }
    }
    let counts: Vec<Var> = terms.iter().map(|t| Var::weighted_sum(t)).collect();
    let loss = class_margin_loss(&counts, label, cfg.margin);
    let g = tape.backward(loss)?;
    let grads = vars.iter().map(|w| w.iter().map(|v| g.wrt(v)).collect()).collect();
    Ok((loss.value(), grads))
}

fn regularizer_gradient(weights: &[Vec<f64>], n_pre: usize, qat: &QatSpec) -> Result<(f64, Vec<Vec<f64>>), LearnError> {
    let tape = Tape::new();
    let vars: Vec<Vec<Var>> = weights.iter().map(|w| w.iter().map(|&x| tape.var(x)).collect()).collect();
    let n_post = weights[0].len() / n_pre;
    let rows: Vec<Vec<Var>> = (0..n_post)
        .map(|j| vars.iter().flat_map(|w| w[j * n_pre..(j + 1) * n_pre].iter().copied()).collect())
        .collect();
    let penalty = fanin_regularizer(&rows, &qat.reg);
    if penalty.is_constant() {
        return Ok((penalty.value(), weights.iter().map(|w| vec![0.0; w.len()]).collect()));
    }
    let g = tape.backward(penalty)?;
    Ok((penalty.value(), vars.iter().map(|w| w.iter().map(|v| g.wrt(v)).collect()).collect()))
}

/// Minibatch training of both weight matrices with the class-margin loss on
/// stimulus-window spike counts. Weights stay non-negative. The history
/// metric is the training accuracy of the epoch's margin signs.
pub fn train_classifier(
    cfg: &ClassifierConfig,
    train: &[Sample],
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<ClassifierModel, LearnError> {
    cfg.validate()?;
    let train = &train[..cfg.max_train.unwrap_or(train.len()).min(train.len())];
    if train.is_empty() {
        return Err(LearnError::Config("no training samples".into()));
    }
    if let Some(s) = train.iter().find(|s| s.values.len() != cfg.n_inputs()) {
        return Err(LearnError::Config(format!("sample has {} values, expected {}", s.values.len(), cfg.n_inputs())));
    }
    let topo = classifier_topology(cfg, consts);
    let base = NetworkParams::nominal(&topo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.init_range;
    let mut weights: Vec<Vec<f64>> = topo
        .projections
        .iter()
        .map(|p| (0..p.weights.len()).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect())
        .collect();
    let sizes: Vec<usize> = weights.iter().map(Vec::len).collect();
    let mut adam = Adam::new(cfg.optimizer, sizes.iter().sum());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<SampleGradient, LearnError>> = batch
                .par_iter()
                .map(|&i| {
                    let s = trial_seed(seed, epoch as u64 + 1, i as u64);
                    sample_gradient(cfg, &topo, &base, &weights, &train[i], s, consts)
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; adam.m.len()];
            for r in results {
                let (loss, g) = r?;
                epoch_loss += loss;
                // a loss below softplus(0) means the correct neuron led by more than the margin
                correct += (loss < std::f64::consts::LN_2) as usize;
                for (slot, v) in grad.iter_mut().zip(g.iter().flatten()) {
                    *slot += v * scale;
                }
            }
            let (_, rg) = regularizer_gradient(&weights, cfg.n_inputs(), &cfg.qat)?;
            for (slot, v) in grad.iter_mut().zip(rg.iter().flatten()) {
                *slot += v;
            }
            let mut flat: Vec<f64> = weights.iter().flatten().copied().collect();
            adam.step(&mut flat, &grad).map_err(|_| LearnError::Diverged { epoch })?;
            let mut it = flat.into_iter();
            for w in weights.iter_mut() {
                for x in w.iter_mut() {
                    *x = it.next().unwrap_or(0.0).max(0.0);
                }
            }
        }
        let loss = epoch_loss / train.len() as f64;
        if !loss.is_finite() {
            return Err(LearnError::Diverged { epoch });
        }
        history.push(HistoryRow { epoch, loss, metric: correct as f64 / train.len() as f64 });
    }
    Ok(ClassifierModel { config: cfg.clone(), weights, history })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    pub accuracy: f64,
    pub samples: usize,
    /// `[true class][predicted class]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy of `weights` on `samples` with the stimulus/rest protocol. Trial
/// `i` uses a seed derived from `seed` and `i` only, so two weight sets are
/// compared on identical input spike trains.
pub fn evaluate_classifier(
    cfg: &ClassifierConfig,
    weights: &[Vec<f64>],
    samples: &[Sample],
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<ClassifierReport, LearnError> {
    let topo = classifier_topology(cfg, consts);
    let mut params = NetworkParams::nominal(&topo);
    if weights.len() != params.weights.len() || weights.iter().zip(&params.weights).any(|(a, b)| a.len() != b.len()) {
        return Err(LearnError::Config("weight shapes do not match the classifier".into()));
    }
    params.weights = weights.to_vec();
    evaluate_network(cfg, &topo, &params, samples, seed, consts)
}

/// Same protocol and trial seeds as [`evaluate_classifier`] on an arbitrary
/// network whose `readout` population has one neuron per class, for
/// instance one rebuilt from an exported netlist.
pub fn evaluate_network(
    cfg: &ClassifierConfig,
    topo: &Topology,
    params: &NetworkParams,
    samples: &[Sample],
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<ClassifierReport, LearnError> {
    let readout = topo
        .population_index("readout")
        .ok_or_else(|| LearnError::Config("network has no 'readout' population".into()))?;
    if topo.populations[readout].size != cfg.classes.len() {
        return Err(LearnError::Config("readout size does not match the class count".into()));
    }
    let preds: Vec<Result<(usize, usize), LearnError>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let truth = cfg.label_index(s.label)?;
            let r = run_classification_trial(
                topo,
                params,
                readout,
                s,
                &cfg.protocol,
                trial_seed(seed, 0, i as u64),
                consts,
            )?;
            Ok((truth, r.predicted))
        })
        .collect();
    let n = cfg.classes.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for p in preds {
        let (t, y) = p?;
        confusion[t][y] += 1;
    }
    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    Ok(ClassifierReport {
        accuracy: if samples.is_empty() { 0.0 } else { correct as f64 / samples.len() as f64 },
        samples: samples.len(),
        confusion,
    })
}
