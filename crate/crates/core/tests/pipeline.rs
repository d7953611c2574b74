use std::fs;

use dpi_sim::cli::{deployed_network, run, Args, Command, Netlist};
use dpi_sim::dpi_core::{NeuronParams, PhysicalConstants, SynapseKind};
use dpi_sim::hw_model::CalibrationTable;
use dpi_sim::learn::Checkpoint;
use dpi_sim::network::{encode_poisson, simulate_params, NetworkParams, Population, RecordFlags, Source, Topology};

fn small_network(c: &PhysicalConstants) -> Topology {
    let mut t = Topology::default();
    let input = t.add_input("in", 8);
    let base = NeuronParams::calibrated_dc(c);
    let exc = t.add_population(Population::new("exc", 6, base));
    let inh = t.add_population(Population::new("inh", 2, base));
    t.connect(input, exc, SynapseKind::Ampa, 4.0);
    t.connect(Source::Population(exc), inh, SynapseKind::Ampa, 3.0);
    t.connect(Source::Population(inh), exc, SynapseKind::GabaA, 2.0);
    t
}

#[test]
fn exported_netlist_simulates_like_the_deployed_network() {
    let c = PhysicalConstants::default();
    let table = CalibrationTable::builtin();
    let deployed = deployed_network(&small_network(&c), &table).unwrap();
    let text = Netlist::export(&deployed, &table, 64).unwrap().to_text();
    let (imported, params) = Netlist::import(&text, &table, &c).unwrap();

    let input = encode_poisson(&[1.0; 8], 80.0, 0.3, 1e-4, 11).unwrap();
    let run = |t: &Topology, p: NetworkParams| simulate_params(t, p, &input, 1e-4, &c, RecordFlags::default()).unwrap();
    let a = run(&deployed, NetworkParams::nominal(&deployed));
    let b = run(&imported, params);
    assert!(!a.spikes.is_empty());
    assert_eq!(a.spikes, b.spikes);
}

#[test]
fn checkpoint_survives_toml_round_trip() {
    let mut ck = Checkpoint::new("classifier");
    ck.add_matrix("AMPA", 2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let back = Checkpoint::from_toml(&ck.to_toml().unwrap()).unwrap();
    assert_eq!(back, ck);
    assert!(Checkpoint::from_toml("format = 1\nkind = 3").is_err());
}

#[test]
fn simulate_command_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        r#"dt = 1e-4
duration = 0.2
seed = 4

[paths]
out_dir = "out"

[simulate]
inputs = [{ name = "in", size = 10, rate_hz = 50.0 }]
populations = [{ name = "exc", size = 5, i_dc_pa = 1.0 }]
connections = [{ pre = "in", post = "exc", kind = "AMPA", weight = 4.0 }]
"#,
    )
    .unwrap();
    let args = |out: &str| Args {
        command: Command::Simulate,
        config: cfg.clone(),
        seed: None,
        out: Some(dir.path().join(out)),
    };
    run(&args("a")).unwrap();
    run(&args("b")).unwrap();
    for file in ["spikes.csv", "raster.svg"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn bad_config_maps_to_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "dt = -1.0\n").unwrap();
    let err = run(&Args { command: Command::Simulate, config: cfg, seed: None, out: None }).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
