use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    deployed_network, histogram_plot, line_plot, raster_plot, CliError, Experiment, Netlist, OutDir, RunConfig,
};
use crate::dpi_core::{NeuronParams, PhysicalConstants, PICO};
use crate::hw_model::{histogram, sweep_csv, tau_sweep, CalibrationTable, SweepRange};
use crate::learn::{
    classifier_topology, deploy, evaluate_classifier, evaluate_network, history_csv, run_local_experiment,
    train_classifier, train_resonator, Checkpoint, ClassifierConfig, ClassifierModel, HistoryRow,
    LocalExperimentConfig, ResonatorConfig, ResonatorResult,
};
use crate::network::{
    encode_poisson, load_idx, simulate_params, spikes_csv, traces_csv, NetworkParams, Population, RecordFlags, Sample,
    Source, SpikeEvent, SpikeTrain, Topology, SPIKE_CSV_HEADER,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Sweep,
    Train,
    Export,
    Experiment,
}

pub fn run_command(cmd: Command, cfg: &RunConfig, out: &mut OutDir) -> Result<String, CliError> {
    let mut report = match cmd {
        Command::Simulate => simulate(cfg, out)?,
        Command::Sweep => sweep(cfg, out)?,
        Command::Train => train(cfg, out)?,
        Command::Export => export(cfg, out)?,
        Command::Experiment => experiment(cfg, out)?,
    };
    for p in out.written() {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(report, "wrote {name}");
    }
    Ok(report)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn infeasible(e: impl std::fmt::Display) -> CliError {
    CliError::Infeasible(e.to_string())
}

// ---------------------------------------------------------------- simulate

fn inline_network(cfg: &RunConfig, consts: &PhysicalConstants) -> Result<Topology, CliError> {
    let spec = &cfg.simulate;
    let mut t = Topology::default();
    for i in &spec.inputs {
        t.add_input(&i.name, i.size);
    }
    for p in &spec.populations {
        let mut n = NeuronParams::calibrated_dc(consts);
        if let Some(v) = p.i_tau_pa {
            n.i_tau = v * PICO;
        }
        if let Some(v) = p.i_gain_pa {
            n.i_gain = v * PICO;
            n.feedback.i_gain = v * PICO;
        }
        if let Some(v) = p.i_dc_pa {
            n.i_dc = v * PICO;
        }
        if let Some(v) = p.threshold_pa {
            n.spike_threshold = v * PICO;
            n.surrogate = crate::autodiff::SurrogateSpec::default_for_threshold(n.spike_threshold);
        }
        if let Some(on) = p.ahp {
            n.ahp.enabled = on;
        }
        t.add_population(Population::new(&p.name, p.size, n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x636f_6e6e_6563_7400);
    for c in &spec.connections {
        let pre = t
            .input_index(&c.pre)
            .map(Source::Input)
            .or_else(|| t.population_index(&c.pre).map(Source::Population))
            .ok_or_else(|| CliError::Config(format!("connection source '{}' is not declared", c.pre)))?;
        let post = t
            .population_index(&c.post)
            .ok_or_else(|| CliError::Config(format!("connection target '{}' is not a population", c.post)))?;
        let pi = t.connect(pre, post, c.kind, 0.0);
        for w in t.projections[pi].weights.iter_mut() {
            if c.probability >= 1.0 || rng.random_bool(c.probability) {
                *w = c.weight;
            }
        }
    }
    t.validate(consts)?;
    Ok(t)
}

fn simulation_network(cfg: &RunConfig, consts: &PhysicalConstants) -> Result<(Topology, NetworkParams), CliError> {
    let (topo, mut params) = match &cfg.paths.netlist {
        Some(path) => {
            let table = cfg.calibration()?;
            Netlist::import(&read(path)?, &table, consts)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            let t = inline_network(cfg, consts)?;
            let p = NetworkParams::nominal(&t);
            (t, p)
        }
    };
    if let Some(m) = &cfg.mismatch {
        params.apply_mismatch(&m.spec(cfg.seed), consts)?;
    }
    Ok((topo, params))
}

/// Poisson input at the configured per-group rates; undeclared groups stay
/// silent.
fn simulation_input(cfg: &RunConfig, topo: &Topology) -> Result<SpikeTrain, CliError> {
    for i in &cfg.simulate.inputs {
        match topo.input_index(&i.name) {
            Some(g) if topo.inputs[g].size == i.size => {}
            _ => return Err(CliError::Config(format!("input '{}' does not match the network", i.name))),
        }
    }
    let steps = (cfg.duration / cfg.dt).round() as usize;
    let rates: Vec<f64> = topo
        .inputs
        .iter()
        .flat_map(|g| {
            let r = cfg.simulate.inputs.iter().find(|i| i.name == g.name).map_or(0.0, |i| i.rate_hz);
            std::iter::repeat_n(r, g.size)
        })
        .collect();
    let max = rates.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(SpikeTrain::silent(rates.len(), steps));
    }
    let values: Vec<f64> = rates.iter().map(|r| r / max).collect();
    Ok(encode_poisson(&values, max, steps as f64 * cfg.dt, cfg.dt, cfg.seed)?)
}

fn simulate(cfg: &RunConfig, out: &mut OutDir) -> Result<String, CliError> {
    let consts = cfg.consts();
    let (topo, params) = simulation_network(cfg, &consts)?;
    let input = simulation_input(cfg, &topo)?;
    let spec = &cfg.simulate;
    let record = RecordFlags { traces: spec.traces, trace_every: spec.trace_every };
    let sim = simulate_params(&topo, params, &input, cfg.dt, &consts, record)?;
    out.write("spikes.csv", &spikes_csv(&topo, &sim))?;
    if spec.traces {
        out.write("traces.csv", &traces_csv(&sim))?;
    }
    let duration = sim.steps as f64 * sim.dt;
    if spec.plots {
        let rows: Vec<(f64, usize)> =
            sim.spikes.iter().map(|e| (e.time(sim.dt), topo.neuron_offset(e.population) + e.neuron)).collect();
        out.write("raster.svg", &raster_plot("spike raster", &rows, duration, topo.n_neurons()))?;
        if let Some(tr) = &sim.traces {
            let series: Vec<(String, Vec<(f64, f64)>)> = (0..topo.n_neurons().min(4))
                .map(|n| {
                    let pts = tr.steps.iter().zip(&tr.i_mem).map(|(&s, v)| ((s + 1) as f64 * sim.dt, v[n] / PICO));
                    (format!("neuron {n}"), pts.collect())
                })
                .collect();
            out.write("i_mem.svg", &line_plot("membrane current", "time (s)", "I_mem (pA)", &series))?;
        }
    }
    let mut r = String::new();
    let _ = writeln!(r, "simulate: {} neurons, {} spikes in {duration:.4} s", topo.n_neurons(), sim.spikes.len());
    for (p, pop) in topo.populations.iter().enumerate() {
        let n = sim.spikes.iter().filter(|e| e.population == p).count();
        let _ = writeln!(r, "population {} rate_hz {:.4}", pop.name, n as f64 / (pop.size as f64 * duration));
    }
    Ok(r)
}

// ------------------------------------------------------------------- sweep

fn sweep(cfg: &RunConfig, out: &mut OutDir) -> Result<String, CliError> {
    let consts = cfg.consts();
    let table = cfg.calibration()?;
    let s = &cfg.sweep;
    let range = SweepRange {
        bias: s.bias.clone(),
        coarse: s.coarse,
        fine_start: s.fine_start,
        fine_end: s.fine_end,
        points: s.points,
    };
    let spec = cfg.mismatch.unwrap_or_default().spec(cfg.seed);
    let points = tau_sweep(&table, &range, s.capacitance_pf * PICO, &spec, s.samples, &consts)?;
    out.write("sweep.csv", &sweep_csv(&points))?;
    let cvs: Vec<f64> = points.iter().map(|p| p.cv()).collect();
    let mean_cv = cvs.iter().sum::<f64>() / cvs.len().max(1) as f64;
    let spread = cvs.iter().map(|c| if mean_cv > 0.0 { (c / mean_cv - 1.0).abs() } else { 0.0 }).fold(0.0, f64::max);
    if s.plots {
        for p in &points {
            let (edges, counts, width) = histogram(&p.samples, s.bins);
            let title = format!("{} fine {} (I = {:.1} nA)", s.bias, p.code.fine, p.i_tau / 1e-9);
            out.write(
                &format!("hist_fine_{:03}.svg", p.code.fine),
                &histogram_plot(&title, "tau (s)", &edges, &counts, width),
            )?;
        }
        let series = vec![("cv".to_string(), points.iter().map(|p| (p.i_tau / 1e-9, p.cv())).collect())];
        out.write("cv.svg", &line_plot("relative spread of tau", &format!("{} (nA)", s.bias), "std / mean", &series))?;
    }
    let mut r = String::new();
    let _ = writeln!(r, "sweep: {} points x {} samples, cv {} seed {}", points.len(), s.samples, spec.cv, spec.seed);
    let _ = writeln!(r, "mean_relative_std {mean_cv:.6}");
    let _ = writeln!(r, "max_deviation_from_mean {spread:.6}");
    Ok(r)
}

// ------------------------------------------------------------------- train

/// The resonator as a one-neuron network without inputs.
pub fn resonator_network(cfg: &ResonatorConfig, i_tau: f64, threshold: f64, consts: &PhysicalConstants) -> Topology {
    let mut n = cfg.neuron(consts);
    n.i_tau = i_tau;
    n.spike_threshold = threshold;
    let mut t = Topology::default();
    t.add_population(Population::new("resonator", 1, n));
    t
}

/// The classifier with the given (deployed) weights installed.
pub fn classifier_network(cfg: &ClassifierConfig, weights: &[Vec<f64>], consts: &PhysicalConstants) -> Topology {
    let mut t = classifier_topology(cfg, consts);
    for (p, w) in t.projections.iter_mut().zip(weights) {
        p.weights = w.clone();
    }
    t
}

pub fn resonator_checkpoint(cfg: &ResonatorConfig, r: &ResonatorResult, seed: u64) -> Checkpoint {
    let mut c = Checkpoint::new("resonator");
    c.seeds.insert("train".into(), seed);
    c.scalars.insert("I_tau_pA".into(), r.i_tau / PICO);
    c.scalars.insert("spike_threshold_pA".into(), r.threshold / PICO);
    c.scalars.insert("I_dc_pA".into(), cfg.i_dc_pa);
    c.scalars.insert("rate_hz".into(), r.rate);
    c
}

pub fn classifier_checkpoint(model: &ClassifierModel, seed: u64) -> Result<Checkpoint, CliError> {
    let mut c = Checkpoint::new("classifier");
    c.seeds.insert("train".into(), seed);
    let n_pre = model.config.n_inputs();
    let names = ["AMPA", "GABA_A"];
    for (name, w) in names.iter().zip(&model.weights) {
        c.add_matrix(name, w.len() / n_pre, n_pre, w.clone())?;
    }
    Ok(c)
}

/// Rebuilds the deployable network of a checkpoint: trained biases for the
/// resonator, fan-in-adjusted integer counts for the classifier.
pub fn checkpoint_network(
    ckpt: &Checkpoint,
    cfg: &RunConfig,
    consts: &PhysicalConstants,
) -> Result<Topology, CliError> {
    match ckpt.kind.as_str() {
        "resonator" => {
            let mut rc = cfg.resonator;
            if let Some(&dc) = ckpt.scalars.get("I_dc_pA") {
                rc.i_dc_pa = dc;
            }
            let i_tau = ckpt.scalar("I_tau_pA")? * PICO;
            let thr = ckpt.scalar("spike_threshold_pA")? * PICO;
            Ok(resonator_network(&rc, i_tau, thr, consts))
        }
        "classifier" => {
            let cc = &cfg.classifier;
            let mut raw = Vec::new();
            for name in ["AMPA", "GABA_A"] {
                let m =
                    ckpt.matrix(name).ok_or_else(|| CliError::Config(format!("checkpoint has no {name} matrix")))?;
                if m.rows != cc.classes.len() || m.cols != cc.n_inputs() {
                    return Err(CliError::Config(format!(
                        "{name} is {}x{}, config expects {}x{}",
                        m.rows,
                        m.cols,
                        cc.classes.len(),
                        cc.n_inputs()
                    )));
                }
                raw.push(m.data.clone());
            }
            let counts = deploy(&raw, cc.n_inputs(), cc.qat.fan_in_limit)?;
            Ok(classifier_network(cc, &counts, consts))
        }
        other => Err(CliError::Config(format!("unknown checkpoint kind '{other}'"))),
    }
}

fn write_netlist(
    topo: &Topology,
    table: &CalibrationTable,
    limit: usize,
    out: &mut OutDir,
) -> Result<(Netlist, String), CliError> {
    let net = Netlist::export(topo, table, limit).map_err(infeasible)?;
    let text = net.to_text();
    out.write("netlist.txt", &text)?;
    Ok((net, text))
}

fn max_fan_in(topo: &Topology) -> f64 {
    (0..topo.populations.len()).flat_map(|p| topo.fan_in(p)).fold(0.0, f64::max)
}

/// Train and test samples of the configured classes from `paths.data_dir`.
pub fn load_digits(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>), CliError> {
    let dir = cfg.paths.data_dir.as_ref().ok_or_else(|| CliError::Config("paths.data_dir is required".into()))?;
    let cc = &cfg.classifier;
    let load = |prefix: &str| {
        load_idx(
            &dir.join(format!("{prefix}-images-idx3-ubyte")),
            &dir.join(format!("{prefix}-labels-idx1-ubyte")),
            &cc.classes,
            cc.side,
        )
    };
    Ok((load("train")?, load("test")?))
}

/// At most `limit` samples with the class proportions of `samples`, drawn
/// with `seed` and returned in file order.
pub fn stratified(samples: &[Sample], classes: &[usize], limit: usize, seed: u64) -> Vec<Sample> {
    if samples.len() <= limit {
        return samples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    let mut remaining = limit;
    let mut left = samples.len();
    for &c in classes {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == c).collect();
        let quota = ((idx.len() * remaining) as f64 / left as f64).round() as usize;
        left -= idx.len();
        idx.shuffle(&mut rng);
        idx.truncate(quota.min(remaining));
        remaining -= idx.len();
        keep.extend(idx);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| samples[i].clone()).collect()
}

fn class_counts(samples: &[Sample], classes: &[usize]) -> String {
    classes
        .iter()
        .map(|&c| format!("{c}:{}", samples.iter().filter(|s| s.label == c).count()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn history_plot(rows: &[(String, Vec<HistoryRow>)], metric: &str) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> =
        rows.iter().map(|(l, h)| (l.clone(), h.iter().map(|r| (r.epoch as f64, r.metric)).collect())).collect();
    line_plot("training history", "epoch", metric, &series)
}

fn train(cfg: &RunConfig, out: &mut OutDir) -> Result<String, CliError> {
    let consts = cfg.consts();
    let table = cfg.calibration()?;
    let limit = cfg.classifier.qat.fan_in_limit;
    let mut r = String::new();
    match cfg.require_experiment()? {
        Experiment::Resonator => {
            let res = train_resonator(&cfg.resonator, cfg.seed, &consts)?;
            out.write("history.csv", &history_csv(&res.history))?;
            out.write("checkpoint.toml", &resonator_checkpoint(&cfg.resonator, &res, cfg.seed).to_toml()?)?;
            write_netlist(&resonator_network(&cfg.resonator, res.i_tau, res.threshold, &consts), &table, limit, out)?;
            let _ = writeln!(
                r,
                "train resonator: {} epochs, rate {:.4} Hz, converged {}",
                res.epochs, res.rate, res.converged
            );
        }
        Experiment::BinaryDigits => {
            let (train_set, _) = load_digits(cfg)?;
            let model = train_classifier(&cfg.classifier, &train_set, cfg.seed, &consts)?;
            out.write("history.csv", &history_csv(&model.history))?;
            out.write("checkpoint.toml", &classifier_checkpoint(&model, cfg.seed)?.to_toml()?)?;
            let topo = classifier_network(&cfg.classifier, &model.deployed_weights()?, &consts);
            write_netlist(&topo, &table, limit, out)?;
            let last = model.history.last();
            let _ = writeln!(
                r,
                "train binary_digits: {} epochs, final loss {:.6}, train metric {:.4}, max fan-in {}",
                model.history.len(),
                last.map_or(f64::NAN, |h| h.loss),
                last.map_or(f64::NAN, |h| h.metric),
                max_fan_in(&topo)
            );
        }
        Experiment::LocalRule => {
            return Err(CliError::Config("local_rule learns online; run it with the experiment command".into()));
        }
    }
    Ok(r)
}

// ------------------------------------------------------------------ export

fn export(cfg: &RunConfig, out: &mut OutDir) -> Result<String, CliError> {
    let consts = cfg.consts();
    let path = cfg.paths.checkpoint.as_ref().ok_or_else(|| CliError::Config("paths.checkpoint is required".into()))?;
    let ckpt = Checkpoint::from_toml(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let topo = checkpoint_network(&ckpt, cfg, &consts)?;
    let (net, _) = write_netlist(&topo, &cfg.calibration()?, cfg.classifier.qat.fan_in_limit, out)?;
    let synapses: u64 = net.connections.iter().map(|c| c.count).sum();
    Ok(format!(
        "export {}: {} populations, {} connections, {synapses} synapses, max fan-in {}\n",
        ckpt.kind,
        net.populations.len(),
        net.connections.len(),
        max_fan_in(&topo)
    ))
}

// -------------------------------------------------------------- experiment

fn experiment(cfg: &RunConfig, out: &mut OutDir) -> Result<String, CliError> {
    let exp = cfg.require_experiment()?;
    let mut r = format!("experiment {}\nseed {}\n", exp.name(), cfg.seed);
    match exp {
        Experiment::Resonator => resonator_experiment(cfg, out, &mut r)?,
        Experiment::BinaryDigits => digits_experiment(cfg, out, &mut r)?,
        Experiment::LocalRule => local_experiment(cfg, out, &mut r)?,
    }
    out.write("report.txt", &r)?;
    Ok(r)
}

fn resonator_experiment(cfg: &RunConfig, out: &mut OutDir, r: &mut String) -> Result<(), CliError> {
    let consts = cfg.consts();
    let rc = &cfg.resonator;
    let _ = writeln!(r, "target_hz {:.4}\ni_dc_pA {:.3}", rc.target_hz, rc.i_dc_pa);
    let mut histories = Vec::new();
    let mut converged = 0;
    for k in 0..cfg.runs as u64 {
        let seed = cfg.seed + k;
        let res = train_resonator(rc, seed, &consts)?;
        out.write(&format!("history_seed{seed}.csv"), &history_csv(&res.history))?;
        out.write(&format!("checkpoint_seed{seed}.toml"), &resonator_checkpoint(rc, &res, seed).to_toml()?)?;
        converged += res.converged as usize;
        let _ = writeln!(
            r,
            "run seed {seed} epochs {} final_rate_hz {:.4} converged {} I_tau_pA {:.4} threshold_pA {:.3}",
            res.epochs,
            res.rate,
            res.converged,
            res.i_tau / PICO,
            res.threshold / PICO
        );
        histories.push((format!("seed {seed}"), res.history));
    }
    let _ = writeln!(r, "converged {converged}/{}", cfg.runs);
    out.write("rate.svg", &history_plot(&histories, "rate (Hz)"))?;
    Ok(())
}

fn digits_experiment(cfg: &RunConfig, out: &mut OutDir, r: &mut String) -> Result<(), CliError> {
    let consts = cfg.consts();
    let table = cfg.calibration()?;
    let cc = &cfg.classifier;
    let (train_set, test_all) = load_digits(cfg)?;
    let test = stratified(&test_all, &cc.classes, cfg.data.test_limit, cfg.seed);
    let used = cc.max_train.unwrap_or(train_set.len()).min(train_set.len());
    let _ = writeln!(r, "train_samples {used} of {} ({})", train_set.len(), class_counts(&train_set, &cc.classes));
    let _ = writeln!(
        r,
        "test_samples {} of {} available, limit {} (split {})",
        test.len(),
        test_all.len(),
        cfg.data.test_limit,
        class_counts(&test, &cc.classes)
    );

    let model = train_classifier(cc, &train_set, cfg.seed, &consts)?;
    out.write("history.csv", &history_csv(&model.history))?;
    out.write("checkpoint.toml", &classifier_checkpoint(&model, cfg.seed)?.to_toml()?)?;
    out.write("history.svg", &history_plot(&[("train".into(), model.history.clone())], "train metric"))?;

    let eval_seed = cfg.seed.wrapping_add(1);
    let fq = evaluate_classifier(cc, &model.training_weights(), &test, eval_seed, &consts)?;
    let topo = classifier_network(cc, &model.deployed_weights()?, &consts);
    let (_, text) = write_netlist(&topo, &table, cc.qat.fan_in_limit, out)?;
    let (dtopo, dparams) = Netlist::import(&text, &table, &consts).map_err(infeasible)?;
    let dep = evaluate_network(cc, &dtopo, &dparams, &test, eval_seed, &consts)?;

    // the first test trial through the in-memory deployed network and through the re-imported netlist
    let identical = match test.first() {
        Some(s) => {
            let input = cc.protocol.input(&s.values, eval_seed)?;
            let mem = deployed_network(&topo, &table).map_err(infeasible)?;
            let flags = RecordFlags::default();
            let a = simulate_params(&mem, NetworkParams::nominal(&mem), &input, cc.protocol.dt, &consts, flags)?;
            let b = simulate_params(&dtopo, dparams.clone(), &input, cc.protocol.dt, &consts, flags)?;
            out.write("raster_deployed_trial0.csv", &spikes_csv(&dtopo, &b))?;
            a.spikes == b.spikes
        }
        None => true,
    };
    let _ = writeln!(r, "fake_quantized_accuracy {:.6}", fq.accuracy);
    let _ = writeln!(r, "deployed_accuracy {:.6}", dep.accuracy);
    let _ = writeln!(r, "deployed_minus_fake_quantized_pp {:.4}", 100.0 * (dep.accuracy - fq.accuracy));
    let _ = writeln!(r, "max_fan_in {} limit {}", max_fan_in(&dtopo), cc.qat.fan_in_limit);
    for (i, row) in dep.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(r, "confusion_deployed class {} {}", cc.classes[i], cells.join(" "));
    }
    let _ = writeln!(r, "round_trip_raster_identical {identical}");
    Ok(())
}

fn events_csv(topo: &Topology, events: &[SpikeEvent], dt: f64) -> String {
    let mut s = String::from(SPIKE_CSV_HEADER);
    s.push('\n');
    for e in events {
        let _ = writeln!(s, "{:.6},{},{}", e.time(dt), topo.populations[e.population].name, e.neuron);
    }
    s
}

fn local_experiment(cfg: &RunConfig, out: &mut OutDir, r: &mut String) -> Result<(), CliError> {
    let consts = cfg.consts();
    let lc: &LocalExperimentConfig = &cfg.local_rule;
    let rule = lc.rule(&consts)?;
    let rep = run_local_experiment(lc, &rule, cfg.seed, &consts)?;
    let b = rep.phase_bounds;
    let output = rep.topology.population_index("output").unwrap_or(1);
    for (k, phase) in ["free", "train", "test"].iter().enumerate() {
        let (from, to) = (b[k], b[k + 1]);
        let events: Vec<SpikeEvent> = rep.spikes.iter().copied().filter(|e| e.step >= from && e.step < to).collect();
        out.write(&format!("raster_{phase}.csv"), &events_csv(&rep.topology, &events, lc.dt))?;
        let rows: Vec<(f64, usize)> = events
            .iter()
            .filter(|e| e.population == output)
            .map(|e| (e.time(lc.dt) - from as f64 * lc.dt, e.neuron))
            .collect();
        let title = format!("output population, {phase} phase");
        out.write(
            &format!("raster_{phase}.svg"),
            &raster_plot(&title, &rows, (to - from) as f64 * lc.dt, lc.n_output),
        )?;
        let _ = writeln!(
            r,
            "phase {phase} {:.4} s to {:.4} s, {} spikes",
            from as f64 * lc.dt,
            to as f64 * lc.dt,
            events.len()
        );
    }
    let mut w = String::from("post,pre,weight\n");
    for (idx, v) in rep.final_weights.iter().enumerate() {
        let _ = writeln!(w, "{},{},{v:.6}", idx / lc.n_hidden, idx % lc.n_hidden);
    }
    out.write("weights.csv", &w)?;
    let sel = rep.selectivity();
    for (g, (rates, s)) in rep.test_rates.iter().zip(&sel).enumerate() {
        let _ = writeln!(r, "group {g} test_rate_hz class0 {:.4} class1 {:.4} selectivity {s:.4}", rates[0], rates[1]);
    }
    let _ = writeln!(r, "selective {}", sel.iter().all(|&s| s >= 2.0));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(label: usize) -> Sample {
        Sample { label, values: vec![label as f64] }
    }

    #[test]
    fn stratified_keeps_proportions_and_order() {
        let samples: Vec<Sample> = (0..100).map(|i| sample(if i % 4 == 0 { 0 } else { 1 })).collect();
        let all = stratified(&samples, &[0, 1], 200, 1);
        assert_eq!(all, samples);
        let some = stratified(&samples, &[0, 1], 40, 1);
        assert_eq!(some.len(), 40);
        assert_eq!(some.iter().filter(|s| s.label == 0).count(), 10);
        assert_eq!(some, stratified(&samples, &[0, 1], 40, 1));
    }

    #[test]
    fn inline_network_follows_the_spec() {
        let cfg = RunConfig::parse(
            "seed = 2\n[simulate]\ninputs = [{ name = \"in\", size = 4, rate_hz = 50.0 }]\n\
             populations = [{ name = \"a\", size = 3, i_dc_pa = 1.0 }]\n\
             connections = [{ pre = \"in\", post = \"a\", kind = \"AMPA\", weight = 2.0, probability = 0.5 }]\n",
        )
        .unwrap();
        let c = PhysicalConstants::default();
        let t = inline_network(&cfg, &c).unwrap();
        assert_eq!(t.populations[0].neuron.i_dc, 1.0 * PICO);
        let w = &t.projections[0].weights;
        assert!(w.iter().all(|&x| x == 0.0 || x == 2.0));
        assert_eq!(w, &inline_network(&cfg, &c).unwrap().projections[0].weights);
        let input = simulation_input(&cfg, &t).unwrap();
        assert_eq!(input.channels, 4);
        assert!(input.total() > 0);
    }

    #[test]
    fn classifier_checkpoint_exports_within_fan_in() {
        let c = PhysicalConstants::default();
        let cfg = RunConfig::default();
        let cc = &cfg.classifier;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights: Vec<Vec<f64>> = (0..2).map(|_| (0..512).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let model = ClassifierModel { config: cc.clone(), weights, history: vec![] };
        let ckpt = Checkpoint::from_toml(&classifier_checkpoint(&model, 5).unwrap().to_toml().unwrap()).unwrap();
        let topo = checkpoint_network(&ckpt, &cfg, &c).unwrap();
        assert!(topo.is_deployable(64));
        let net = Netlist::export(&topo, &CalibrationTable::builtin(), 64).unwrap();
        assert!(!net.connections.is_empty());
    }
}
