//! `dpi-sim` command line: configuration, experiment drivers, file output
//! and the hardware netlist.

mod commands;
mod config;
mod netlist;
mod output;

pub use commands::{
    checkpoint_network, classifier_checkpoint, classifier_network, load_digits, resonator_checkpoint,
    resonator_network, run_command, stratified, Command,
};
pub use config::{
    ConnectionSpec, DataSpec, Experiment, InputSpec, MismatchConfig, Paths, PopulationSpec, RunConfig, SimulateSpec,
    SweepSpec,
};
pub use netlist::{
    bias_names, deployed_network, Connection, Netlist, NetlistError, NetlistPopulation, NetlistProjection, NeuronModel,
    SynapseModel, NETLIST_HEADER,
};
pub use output::{histogram_plot, line_plot, raster_plot, OutDir};

use std::path::PathBuf;

use clap::Parser;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::dpi_core::DpiError;
use crate::hw_model::HwError;
use crate::learn::LearnError;
use crate::network::NetworkError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible export: {0}")]
    Infeasible(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<DpiError> for CliError {
    fn from(e: DpiError) -> Self {
        match e {
            DpiError::NonFinite(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<HwError> for CliError {
    fn from(e: HwError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Dpi(d) => d.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::InvalidSurrogate { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Config(_) | LearnError::Checkpoint(_) => CliError::Config(e.to_string()),
            LearnError::NonFiniteGradient | LearnError::Diverged { .. } => CliError::Numerical(e.to_string()),
            LearnError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            LearnError::Network(n) => n.into(),
            LearnError::Autodiff(a) => a.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dpi-sim", version, about = "Simulate, train and export DPI neuron networks")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `paths.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Caps the rayon pool at `DPI_SIM_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DPI_SIM_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("DPI_SIM_THREADS must be a positive integer, got '{v}'")))?;
    // a pool built earlier in the process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Loads the config, applies the overrides and runs the command. Returns
/// the report printed to stdout.
pub fn run(args: &Args) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.paths.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    let out_dir = cfg.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutDir::create(&out_dir)?;
    run_command(args.command, &cfg, &mut out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(LearnError::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(LearnError::Diverged { epoch: 1 }).exit_code(), 3);
        assert_eq!(CliError::from(LearnError::Infeasible { row: 0, reason: "x".into() }).exit_code(), 4);
        assert_eq!(CliError::from(DpiError::NonFinite("I_mem")).exit_code(), 3);
        assert_eq!(CliError::from(NetworkError::Dpi(DpiError::InvalidTimeStep(0.0))).exit_code(), 2);
    }

    #[test]
    fn args_parse() {
        let a = Args::try_parse_from(["dpi-sim", "sweep", "--config", "c.toml", "--seed", "4"]).unwrap();
        assert_eq!(a.command, Command::Sweep);
        assert_eq!(a.seed, Some(4));
        assert!(Args::try_parse_from(["dpi-sim", "fly", "--config", "c.toml"]).is_err());
        assert!(Args::try_parse_from(["dpi-sim", "simulate"]).is_err());
    }
}
