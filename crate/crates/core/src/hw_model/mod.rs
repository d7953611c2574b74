//! Bias generator codes, calibration anchors and fabrication mismatch.

mod calibration;
mod mismatch;
mod sweep;

pub use calibration::{BiasCode, CalibrationTable, Interpolation, MAX_COARSE};
pub use mismatch::{mean_std, sample_mismatch, MismatchDistribution, MismatchSpec, Mismatchable};
pub use sweep::{histogram, sweep_csv, tau_sweep, SweepPoint, SweepRange, SWEEP_CSV_HEADER};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HwError {
    #[error("invalid bias code [{coarse},{fine}] (coarse 0..=7, fine 0..=255)")]
    InvalidCode { coarse: i64, fine: i64 },
    #[error("unknown bias '{0}'")]
    UnknownBias(String),
    #[error("code {code} of bias '{bias}' lies outside the calibrated anchors")]
    OutOfRange { bias: String, code: BiasCode },
    #[error("current {current:.4e} A outside the range of bias '{bias}' ({min:.4e}..{max:.4e} A)")]
    CurrentOutOfRange { bias: String, current: f64, min: f64, max: f64 },
    #[error("bias '{bias}' has a non-positive current at {code}")]
    NonPositiveCurrent { bias: String, code: BiasCode },
    #[error("bias '{bias}' decreases from {lower} to {upper}")]
    NotMonotone { bias: String, lower: BiasCode, upper: BiasCode },
    #[error("calibration line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid mismatch spec: {0}")]
    InvalidMismatch(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("io: {0}")]
    Io(String),
}
