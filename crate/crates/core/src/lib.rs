//! Simulation, calibration and training of DPI synapse and neuron circuits.
// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod dpi_core;
pub mod hw_model;
pub mod learn;
pub mod network;
