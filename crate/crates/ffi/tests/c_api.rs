use std::ffi::{c_char, CStr, CString};
use std::ptr;

use dpi_sim::cli::Netlist;
use dpi_sim::dpi_core::{NeuronParams, PhysicalConstants, SynapseKind};
use dpi_sim::hw_model::CalibrationTable;
use dpi_sim::network::{encode_poisson, simulate_params, Population, RecordFlags, Topology};
use dpi_sim_ffi::*;

fn netlist_text() -> (String, Topology) {
    let c = PhysicalConstants::default();
    let mut t = Topology::default();
    let input = t.add_input("in", 8);
    let a = t.add_population(Population::new("a", 4, NeuronParams::calibrated_dc(&c)));
    let pi = t.connect(input, a, SynapseKind::Ampa, 0.0);
    for (i, w) in t.projections[pi].weights.iter_mut().enumerate() {
        *w = (i % 4) as f64 * 3.0;
    }
    let table = CalibrationTable::builtin();
    let text = Netlist::export(&t, &table, 64).unwrap().to_text();
    let (back, _) = Netlist::import(&text, &table, &c).unwrap();
    (text, back)
}

#[test]
fn network_raster_matches_the_library() {
    let (text, topo) = netlist_text();
    let c = PhysicalConstants::default();
    let dt = 1e-4;
    let train = encode_poisson(&[1.0; 8], 80.0, 0.5, dt, 9).unwrap();
    let expected =
        simulate_params(&topo, dpi_sim::network::NetworkParams::nominal(&topo), &train, dt, &c, RecordFlags::default())
            .unwrap();
    assert!(!expected.spikes.is_empty());

    let bytes: Vec<u8> = (0..train.steps).flat_map(|s| train.at(s).iter().map(|&b| b as u8)).collect();
    let src = CString::new(text).unwrap();
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(dpi_network_from_netlist(src.as_ptr(), ptr::null(), &mut net), DpiStatus::Ok);
        let (mut n_in, mut n_neu) = (0, 0);
        assert_eq!(dpi_network_size(net, &mut n_in, &mut n_neu), DpiStatus::Ok);
        assert_eq!((n_in, n_neu), (8, 4));

        let mut raster = ptr::null_mut();
        assert_eq!(dpi_network_simulate(net, bytes.as_ptr(), train.steps, 8, dt, &mut raster), DpiStatus::Ok);
        assert_eq!(dpi_raster_len(raster), expected.spikes.len());
        for (i, e) in expected.spikes.iter().enumerate() {
            let (mut step, mut neuron) = (0, 0);
            assert_eq!(dpi_raster_get(raster, i, &mut step, &mut neuron), DpiStatus::Ok);
            assert_eq!((step, neuron), (e.step, e.neuron));
        }
        assert_eq!(
            dpi_raster_get(raster, expected.spikes.len(), ptr::null_mut(), ptr::null_mut()),
            DpiStatus::OutOfRange
        );
        dpi_raster_free(raster);

        let mut raster = ptr::null_mut();
        assert_eq!(dpi_network_simulate(net, bytes.as_ptr(), train.steps, 7, dt, &mut raster), DpiStatus::OutOfRange);
        assert!(raster.is_null());
        dpi_network_free(net);
    }
}

#[test]
fn corrupted_netlists_are_config_errors() {
    let (text, _) = netlist_text();
    let bad = CString::new(text.replacen("dpi-netlist v1", "dpi-netlist v9", 1)).unwrap();
    unsafe {
        let mut net = ptr::null_mut();
        assert_eq!(dpi_network_from_netlist(bad.as_ptr(), ptr::null(), &mut net), DpiStatus::Config);
        assert!(net.is_null());
        let mut buf = [0 as c_char; 128];
        dpi_last_error(buf.as_mut_ptr(), buf.len());
        assert!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap().contains("E11"));
    }
}

#[test]
fn dc_neuron_fires_periodically() {
    unsafe {
        let mut n = ptr::null_mut();
        assert_eq!(dpi_neuron_new(&mut n), DpiStatus::Ok);
        assert_eq!(dpi_neuron_set_current(n, DpiCurrent::Dc, 10e-12), DpiStatus::Ok);
        let mut spike_steps = Vec::new();
        for step in 0..40_000 {
            let mut s = 0;
            assert_eq!(dpi_neuron_step(n, 1e-4, 0.0, &mut s), DpiStatus::Ok);
            if s == 1 {
                spike_steps.push(step);
            }
        }
        assert!(spike_steps.len() >= 3, "{spike_steps:?}");
        let mut i_mem = 0.0;
        assert_eq!(dpi_neuron_i_mem(n, &mut i_mem), DpiStatus::Ok);
        assert!(i_mem > 0.0);
        dpi_neuron_free(n);
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dpi_sim.h")).unwrap();
    for name in [
        "typedef struct DpiNetwork DpiNetwork",
        "DPI_STATUS_INFEASIBLE = 4",
        "dpi_network_from_netlist",
        "dpi_network_simulate",
        "dpi_raster_get",
        "dpi_neuron_step",
        "dpi_last_error",
    ] {
        assert!(h.contains(name), "{name}");
    }
}
