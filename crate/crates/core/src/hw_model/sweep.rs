use std::fmt::Write as _;

use super::{mean_std, sample_mismatch, BiasCode, CalibrationTable, HwError, MismatchSpec};
use crate::dpi_core::PhysicalConstants;

/// Fine-code sweep of one bias at a fixed coarse value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRange {
    pub bias: String,
    pub coarse: u8,
    pub fine_start: u8,
    pub fine_end: u8,
    pub points: usize,
}

impl SweepRange {
    /// Evenly spaced fine codes from start to end inclusive (duplicates
    /// removed when `points` exceeds the code span).
    pub fn codes(&self) -> Result<Vec<BiasCode>, HwError> {
        if self.fine_end < self.fine_start || self.points == 0 {
            return Err(HwError::InvalidSweep(format!(
                "fine {}..{} with {} points",
                self.fine_start, self.fine_end, self.points
            )));
        }
        let span = (self.fine_end - self.fine_start) as f64;
        let mut fines: Vec<u8> = if self.points == 1 {
            vec![self.fine_start]
        } else {
            (0..self.points)
                .map(|k| self.fine_start + (span * k as f64 / (self.points - 1) as f64).round() as u8)
                .collect()
        };
        fines.dedup();
        Ok(fines.into_iter().map(|fine| BiasCode { coarse: self.coarse, fine }).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub code: BiasCode,
    /// Nominal leak current (A).
    pub i_tau: f64,
    pub mean_tau: f64,
    pub std_tau: f64,
    /// Every sampled time constant (s), in draw order.
    pub samples: Vec<f64>,
}

impl SweepPoint {
    pub fn cv(&self) -> f64 {
        if self.mean_tau == 0.0 {
            0.0
        } else {
            self.std_tau / self.mean_tau
        }
    }
}

/// Monte-Carlo distribution of the membrane time constant over a leak-bias
/// sweep. Each point draws `n` mismatched copies of the nominal leak.
pub fn tau_sweep(
    table: &CalibrationTable,
    range: &SweepRange,
    capacitance: f64,
    spec: &MismatchSpec,
    n: usize,
    consts: &PhysicalConstants,
) -> Result<Vec<SweepPoint>, HwError> {
    let codes = range.codes()?;
    let mut out = Vec::with_capacity(codes.len());
    for (k, code) in codes.into_iter().enumerate() {
        let i_tau = table.code_to_current(&range.bias, code)?;
        // Separate seed per point so points are independent draws.
        let point_spec = MismatchSpec { seed: spec.seed.wrapping_add(k as u64 * 0x9E37_79B9), ..*spec };
        let currents = sample_mismatch(&i_tau, &point_spec, n, consts.dark_current)?;
        let samples: Vec<f64> = currents.iter().map(|&i| consts.tau(capacitance, i)).collect();
        let (mean_tau, std_tau) = mean_std(&samples);
        out.push(SweepPoint { code, i_tau, mean_tau, std_tau, samples });
    }
    Ok(out)
}

pub const SWEEP_CSV_HEADER: &str = "bias_fine,mean_tau_s,std_tau_s,cv";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{:.9e},{:.9e},{:.6}", p.code.fine, p.mean_tau, p.std_tau, p.cv());
    }
    s
}

/// Equal-width histogram: returns `(bin lower edges, counts, bin width)`.
pub fn histogram(xs: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>, f64) {
    let bins = bins.max(1);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() || !(hi > lo) {
        let edge = if xs.is_empty() { 0.0 } else { lo };
        let mut counts = vec![0; bins];
        counts[0] = xs.len();
        return (vec![edge; bins], counts, 0.0);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    ((0..bins).map(|b| lo + b as f64 * width).collect(), counts, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpi_core::PICO;
    use crate::hw_model::MismatchDistribution;

    fn range() -> SweepRange {
        SweepRange { bias: "IF_TAU1_N".into(), coarse: 5, fine_start: 74, fine_end: 190, points: 8 }
    }

    #[test]
    fn zero_cv_has_zero_spread() {
        let t = CalibrationTable::builtin();
        let c = PhysicalConstants::default();
        let spec = MismatchSpec { cv: 0.0, ..Default::default() };
        let pts = tau_sweep(&t, &range(), 2.0 * PICO, &spec, 100, &c).unwrap();
        assert_eq!(pts.len(), 8);
        assert!(pts.iter().all(|p| p.std_tau == 0.0));
        let csv = sweep_csv(&pts);
        assert!(csv.starts_with("bias_fine,mean_tau_s,std_tau_s,cv\n74,"));
    }

    #[test]
    fn tau_falls_and_cv_is_flat() {
        let t = CalibrationTable::builtin();
        let c = PhysicalConstants::default();
        let spec = MismatchSpec { cv: 0.2, distribution: MismatchDistribution::Lognormal, seed: 11 };
        let pts = tau_sweep(&t, &range(), 2.0 * PICO, &spec, 4000, &c).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].mean_tau < w[0].mean_tau);
        }
        let cvs: Vec<f64> = pts.iter().map(SweepPoint::cv).collect();
        let mean_cv = cvs.iter().sum::<f64>() / cvs.len() as f64;
        for cv in cvs {
            assert!((cv / mean_cv - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn range_errors() {
        let t = CalibrationTable::builtin();
        let c = PhysicalConstants::default();
        let mut r = range();
        r.fine_end = 200;
        assert!(tau_sweep(&t, &r, 2e-12, &MismatchSpec::default(), 10, &c).is_err());
        r.fine_end = 10;
        assert!(r.codes().is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let xs = [0.0, 0.1, 0.2, 0.9, 1.0];
        let (edges, counts, w) = histogram(&xs, 4);
        assert_eq!(counts.iter().sum::<usize>(), 5);
        assert_eq!(counts, vec![3, 0, 0, 2]);
        assert!((w - 0.25).abs() < 1e-12 && edges[0] == 0.0);
    }
}
