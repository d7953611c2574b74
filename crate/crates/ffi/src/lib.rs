//! C ABI over `dpi-sim`: a single DPI neuron stepped by the caller, and
//! networks loaded from netlist text and run on caller-supplied input spikes.
//!
//! Every function returns a [`DpiStatus`]; on failure the message is kept
//! per thread and read with [`dpi_last_error`]. Handles are opaque and must
//! be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dpi_sim::cli::{CliError, Netlist};
use dpi_sim::dpi_core::{neuron_step, NeuronParams, NeuronState, PhysicalConstants, SynapticInput};
use dpi_sim::hw_model::CalibrationTable;
use dpi_sim::network::{simulate_params, NetworkParams, RecordFlags, SpikeEvent, SpikeTrain, Topology};

/// Result of every call. Codes 2 to 4 match the exit codes of `dpi-sim`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpiStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Numerical = 3,
    Infeasible = 4,
    InvalidUtf8 = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Neuron bias currents settable through [`dpi_neuron_set_current`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpiCurrent {
    Tau = 0,
    Gain = 1,
    Dc = 2,
    Threshold = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(DpiStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e {
            CliError::Numerical(_) => DpiStatus::Numerical,
            CliError::Infeasible(_) => DpiStatus::Infeasible,
            CliError::Config(_) | CliError::Io(_) => DpiStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn config(e: impl std::fmt::Display) -> Failure {
    Failure(DpiStatus::Config, e.to_string())
}

fn null(what: &str) -> Failure {
    Failure(DpiStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DpiStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (DpiStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(_) => (DpiStatus::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(DpiStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dpi_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dpi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------------ neuron

/// One neuron with its state, stepped by the caller.
pub struct DpiNeuron {
    params: NeuronParams,
    state: NeuronState,
    consts: PhysicalConstants,
}

/// Creates a neuron at the calibrated DC setting, at rest.
///
/// # Safety
/// `out_neuron` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn dpi_neuron_new(out_neuron: *mut *mut DpiNeuron) -> DpiStatus {
    guard(|| {
        let consts = PhysicalConstants::default();
        let n = DpiNeuron { params: NeuronParams::calibrated_dc(&consts), state: NeuronState::rest(&consts), consts };
        out(out_neuron, Box::into_raw(Box::new(n)), "out_neuron")
    })
}

/// Sets a bias current (A). The neuron keeps its old value if the new
/// parameter set is invalid.
///
/// # Safety
/// `neuron` must be a live handle from [`dpi_neuron_new`].
#[no_mangle]
pub unsafe extern "C" fn dpi_neuron_set_current(neuron: *mut DpiNeuron, which: DpiCurrent, amps: f64) -> DpiStatus {
    guard(|| {
        let n = handle(neuron, "neuron")?;
        let mut p = n.params;
        match which {
            DpiCurrent::Tau => p.i_tau = amps,
            DpiCurrent::Gain => {
                p.i_gain = amps;
                p.feedback.i_gain = amps;
            }
            DpiCurrent::Dc => p.i_dc = amps,
            DpiCurrent::Threshold => p.spike_threshold = amps,
        }
        p.validate(&n.consts).map_err(config)?;
        n.params = p;
        Ok(())
    })
}

/// Advances the neuron by `dt` seconds with an excitatory synaptic current
/// `i_syn` (A, above the dark current). Writes 1 to `spiked` if it fired.
///
/// # Safety
/// `neuron` must be a live handle; `spiked` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dpi_neuron_step(neuron: *mut DpiNeuron, dt: f64, i_syn: f64, spiked: *mut i32) -> DpiStatus {
    guard(|| {
        let n = handle(neuron, "neuron")?;
        if !(i_syn >= 0.0 && i_syn.is_finite()) {
            return Err(Failure(DpiStatus::OutOfRange, format!("i_syn must be finite and >= 0, got {i_syn}")));
        }
        let input = SynapticInput { ampa: i_syn, ..SynapticInput::none() };
        n.state =
            neuron_step(&n.state, &n.params, &input, dt, &n.consts).map_err(|e| Failure::from(CliError::from(e)))?;
        if !spiked.is_null() {
            spiked.write(n.state.has_spiked() as i32);
        }
        Ok(())
    })
}

/// Reads the membrane current (A).
///
/// # Safety
/// `neuron` must be a live handle and `i_mem` writable.
#[no_mangle]
pub unsafe extern "C" fn dpi_neuron_i_mem(neuron: *const DpiNeuron, i_mem: *mut f64) -> DpiStatus {
    guard(|| {
        let n = neuron.as_ref().ok_or_else(|| null("neuron"))?;
        out(i_mem, n.state.i_mem, "i_mem")
    })
}

/// Returns the neuron to rest.
///
/// # Safety
/// `neuron` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dpi_neuron_reset(neuron: *mut DpiNeuron) -> DpiStatus {
    guard(|| {
        let n = handle(neuron, "neuron")?;
        n.state = NeuronState::rest(&n.consts);
        Ok(())
    })
}

/// # Safety
/// `neuron` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dpi_neuron_free(neuron: *mut DpiNeuron) {
    if !neuron.is_null() {
        drop(Box::from_raw(neuron));
    }
}

// ----------------------------------------------------------------- network

/// A network rebuilt from a netlist.
pub struct DpiNetwork {
    topo: Topology,
    params: NetworkParams,
    consts: PhysicalConstants,
}

/// Parses and validates netlist text. `calibration_csv` may be null for the
/// built-in calibration table.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out_network` writable.
#[no_mangle]
pub unsafe extern "C" fn dpi_network_from_netlist(
    netlist: *const c_char,
    calibration_csv: *const c_char,
    out_network: *mut *mut DpiNetwork,
) -> DpiStatus {
    guard(|| {
        let src = text(netlist, "netlist")?;
        let table = if calibration_csv.is_null() {
            CalibrationTable::builtin()
        } else {
            CalibrationTable::parse(text(calibration_csv, "calibration_csv")?).map_err(config)?
        };
        let consts = PhysicalConstants::default();
        let (topo, params) = Netlist::import(src, &table, &consts).map_err(config)?;
        out(out_network, Box::into_raw(Box::new(DpiNetwork { topo, params, consts })), "out_network")
    })
}

/// Number of input channels and of neurons.
///
/// # Safety
/// `network` must be a live handle; the outputs must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dpi_network_size(
    network: *const DpiNetwork,
    n_inputs: *mut usize,
    n_neurons: *mut usize,
) -> DpiStatus {
    guard(|| {
        let n = network.as_ref().ok_or_else(|| null("network"))?;
        if !n_inputs.is_null() {
            n_inputs.write(n.topo.n_inputs());
        }
        if !n_neurons.is_null() {
            n_neurons.write(n.topo.n_neurons());
        }
        Ok(())
    })
}

/// Spikes emitted during one run.
pub struct DpiRaster {
    events: Vec<SpikeEvent>,
    offsets: Vec<usize>,
}

/// Runs the network from rest. `input` holds `steps × channels` bytes,
/// row-major by step; nonzero marks an input spike.
///
/// # Safety
/// `network` must be a live handle, `input` must point to
/// `steps * channels` readable bytes (or be null when either is 0), and
/// `out_raster` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpi_network_simulate(
    network: *const DpiNetwork,
    input: *const u8,
    steps: usize,
    channels: usize,
    dt: f64,
    out_raster: *mut *mut DpiRaster,
) -> DpiStatus {
    guard(|| {
        let n = network.as_ref().ok_or_else(|| null("network"))?;
        if channels != n.topo.n_inputs() {
            return Err(Failure(
                DpiStatus::OutOfRange,
                format!("network has {} input channels, got {channels}", n.topo.n_inputs()),
            ));
        }
        let len =
            steps.checked_mul(channels).ok_or_else(|| Failure(DpiStatus::OutOfRange, "input too large".into()))?;
        let mut train = SpikeTrain::silent(channels, steps);
        if len > 0 {
            if input.is_null() {
                return Err(null("input"));
            }
            let bytes = std::slice::from_raw_parts(input, len);
            for (i, &b) in bytes.iter().enumerate() {
                if b != 0 {
                    train.set(i / channels, i % channels, true);
                }
            }
        }
        let sim = simulate_params(&n.topo, n.params.clone(), &train, dt, &n.consts, RecordFlags::default())
            .map_err(|e| Failure::from(CliError::from(e)))?;
        let offsets = (0..n.topo.populations.len()).map(|p| n.topo.neuron_offset(p)).collect();
        out(out_raster, Box::into_raw(Box::new(DpiRaster { events: sim.spikes, offsets })), "out_raster")
    })
}

/// Number of spikes in the raster.
///
/// # Safety
/// `raster` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dpi_raster_len(raster: *const DpiRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.events.len())
}

/// Spike `index`: its step and global neuron id (populations in netlist
/// order). Spikes are ordered by step, then neuron.
///
/// # Safety
/// `raster` must be a live handle; the outputs must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dpi_raster_get(
    raster: *const DpiRaster,
    index: usize,
    step: *mut usize,
    neuron: *mut usize,
) -> DpiStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        let e = r.events.get(index).ok_or_else(|| {
            Failure(DpiStatus::OutOfRange, format!("spike {index} of a raster with {}", r.events.len()))
        })?;
        if !step.is_null() {
            step.write(e.step);
        }
        if !neuron.is_null() {
            neuron.write(r.offsets[e.population] + e.neuron);
        }
        Ok(())
    })
}

/// # Safety
/// `raster` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dpi_raster_free(raster: *mut DpiRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// # Safety
/// `network` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dpi_network_free(network: *mut DpiNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = [0 as c_char; 256];
        let n = unsafe { dpi_last_error(buf.as_mut_ptr(), buf.len()) };
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
        assert_eq!(s.len(), n.min(255));
        s
    }

    #[test]
    fn null_handles_are_reported() {
        unsafe {
            assert_eq!(dpi_neuron_step(std::ptr::null_mut(), 1e-4, 0.0, std::ptr::null_mut()), DpiStatus::NullPointer);
            assert!(last_error().contains("neuron"));
            assert_eq!(dpi_neuron_new(std::ptr::null_mut()), DpiStatus::NullPointer);
            assert_eq!(dpi_raster_len(std::ptr::null()), 0);
            dpi_neuron_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn invalid_settings_keep_the_old_value() {
        unsafe {
            let mut n = std::ptr::null_mut();
            assert_eq!(dpi_neuron_new(&mut n), DpiStatus::Ok);
            let before = (*n).params.i_tau;
            assert_eq!(dpi_neuron_set_current(n, DpiCurrent::Tau, -1.0), DpiStatus::Config);
            assert_eq!((*n).params.i_tau, before);
            assert_eq!(dpi_neuron_step(n, 0.0, 0.0, std::ptr::null_mut()), DpiStatus::Config);
            assert_eq!(dpi_neuron_step(n, 1e-4, f64::NAN, std::ptr::null_mut()), DpiStatus::OutOfRange);
            assert!(!last_error().is_empty());
            assert_eq!(dpi_neuron_reset(n), DpiStatus::Ok);
            assert!(last_error().is_empty());
            dpi_neuron_free(n);
        }
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(dpi_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
