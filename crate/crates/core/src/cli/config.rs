use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dpi_core::{PhysicalConstants, SynapseKind};
use crate::hw_model::{CalibrationTable, MismatchDistribution, MismatchSpec};
use crate::learn::{ClassifierConfig, LocalExperimentConfig, ResonatorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Resonator,
    BinaryDigits,
    LocalRule,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Resonator => "resonator",
            Experiment::BinaryDigits => "binary_digits",
            Experiment::LocalRule => "local_rule",
        }
    }
}

/// Relative paths are resolved against the directory of the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Calibration CSV; the built-in table when absent.
    pub calibration: Option<PathBuf>,
    /// Directory holding the IDX image and label files.
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Checkpoint read by `export`.
    pub checkpoint: Option<PathBuf>,
    /// Netlist simulated by `simulate` instead of the inline network.
    pub netlist: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchConfig {
    pub cv: f64,
    pub distribution: MismatchDistribution,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        let d = MismatchSpec::default();
        MismatchConfig { cv: d.cv, distribution: d.distribution, seed: None }
    }
}

impl MismatchConfig {
    pub fn spec(&self, run_seed: u64) -> MismatchSpec {
        MismatchSpec { cv: self.cv, distribution: self.distribution, seed: self.seed.unwrap_or(run_seed) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub name: String,
    pub size: usize,
    #[serde(default)]
    pub rate_hz: f64,
}

/// A population of calibrated DC neurons; unset currents keep the
/// calibrated values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub name: String,
    pub size: usize,
    #[serde(default)]
    pub i_tau_pa: Option<f64>,
    #[serde(default)]
    pub i_gain_pa: Option<f64>,
    #[serde(default)]
    pub i_dc_pa: Option<f64>,
    #[serde(default)]
    pub threshold_pa: Option<f64>,
    #[serde(default)]
    pub ahp: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSpec {
    pub pre: String,
    pub post: String,
    pub kind: SynapseKind,
    /// Synapse count of every realised connection.
    pub weight: f64,
    /// Connection probability; 1 connects all pairs.
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub traces: bool,
    pub trace_every: usize,
    pub plots: bool,
    pub inputs: Vec<InputSpec>,
    pub populations: Vec<PopulationSpec>,
    pub connections: Vec<ConnectionSpec>,
}

impl Default for SimulateSpec {
    /// One neuron at the calibrated DC setting.
    fn default() -> Self {
        SimulateSpec {
            traces: true,
            trace_every: 10,
            plots: true,
            inputs: Vec::new(),
            populations: vec![PopulationSpec {
                name: "dc".into(),
                size: 1,
                i_tau_pa: None,
                i_gain_pa: None,
                i_dc_pa: None,
                threshold_pa: None,
                ahp: None,
            }],
            connections: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub bias: String,
    pub coarse: u8,
    pub fine_start: u8,
    pub fine_end: u8,
    pub points: usize,
    /// Monte-Carlo draws per point.
    pub samples: usize,
    pub capacitance_pf: f64,
    pub bins: usize,
    pub plots: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            bias: "IF_TAU1_N".into(),
            coarse: 5,
            fine_start: 74,
            fine_end: 190,
            points: 20,
            samples: 1000,
            capacitance_pf: 2.0,
            bins: 30,
            plots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Upper bound on held-out samples, drawn stratified by class.
    pub test_limit: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec { test_limit: 2115 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment run by `experiment`, preset trained by `train`.
    pub experiment: Option<Experiment>,
    /// Step of `simulate` (s); the experiments carry their own.
    pub dt: f64,
    /// Length of `simulate` (s).
    pub duration: f64,
    pub seed: u64,
    /// Seeds `seed, seed + 1, ...` run by the resonator experiment.
    pub runs: usize,
    pub paths: Paths,
    pub constants: Option<PhysicalConstants>,
    pub mismatch: Option<MismatchConfig>,
    pub simulate: SimulateSpec,
    pub sweep: SweepSpec,
    pub data: DataSpec,
    pub resonator: ResonatorConfig,
    pub classifier: ClassifierConfig,
    pub local_rule: LocalExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            dt: 1e-4,
            duration: 1.0,
            seed: 0,
            runs: 1,
            paths: Paths::default(),
            constants: None,
            mismatch: None,
            simulate: SimulateSpec::default(),
            sweep: SweepSpec::default(),
            data: DataSpec::default(),
            resonator: ResonatorConfig::default(),
            classifier: ClassifierConfig::default(),
            local_rule: LocalExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    /// Parses TOML text without touching the filesystem.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.calibration, &mut p.data_dir, &mut p.out_dir, &mut p.checkpoint, &mut p.netlist] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    pub fn consts(&self) -> PhysicalConstants {
        self.constants.unwrap_or_default()
    }

    pub fn calibration(&self) -> Result<CalibrationTable, CliError> {
        match &self.paths.calibration {
            Some(p) => CalibrationTable::load(p).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(CalibrationTable::builtin()),
        }
    }

    /// Schema checks that do not depend on the command.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if self.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        let p = &self.paths;
        for (what, path) in [
            ("calibration", &p.calibration),
            ("data_dir", &p.data_dir),
            ("checkpoint", &p.checkpoint),
            ("netlist", &p.netlist),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return bad(format!("paths.{what}: {} does not exist", path.display()));
                }
            }
        }
        if let Some(c) = &self.constants {
            c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(m) = &self.mismatch {
            m.spec(self.seed).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let s = &self.simulate;
        if s.trace_every == 0 {
            return bad("simulate.trace_every must be >= 1".into());
        }
        for c in &s.connections {
            if !(c.weight >= 0.0 && c.weight.is_finite() && (0.0..=1.0).contains(&c.probability)) {
                return bad(format!("connection {} -> {}: weight >= 0 and probability in [0, 1]", c.pre, c.post));
            }
        }
        for i in &s.inputs {
            if !(i.rate_hz >= 0.0 && i.rate_hz * self.dt <= 1.0) {
                return bad(format!("input {}: rate {} Hz not in [0, 1/dt]", i.name, i.rate_hz));
            }
        }
        let w = &self.sweep;
        if w.samples == 0 || w.bins == 0 || !(w.capacitance_pf > 0.0) {
            return bad("sweep.samples, sweep.bins and sweep.capacitance_pf must be positive".into());
        }
        self.resonator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.classifier.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.local_rule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn require_experiment(&self) -> Result<Experiment, CliError> {
        self.experiment.ok_or_else(|| CliError::Config("config sets no 'experiment'".into()))
    }
}
