use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HwError;
use crate::dpi_core::{NeuronParams, SynapseParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchDistribution {
    #[default]
    Lognormal,
    TruncatedNormal,
}

/// Multiplicative device-mismatch model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchSpec {
    /// Coefficient of variation of each multiplier.
    pub cv: f64,
    pub distribution: MismatchDistribution,
    pub seed: u64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        MismatchSpec { cv: 0.20, distribution: MismatchDistribution::Lognormal, seed: 0 }
    }
}

/// Anything carrying bias currents that fabrication mismatch perturbs.
pub trait Mismatchable {
    /// Mutable handles to the perturbed currents, always in the same order.
    fn currents_mut(&mut self) -> Vec<&mut f64>;
}

impl Mismatchable for NeuronParams<f64> {
    fn currents_mut(&mut self) -> Vec<&mut f64> {
        NeuronParams::currents_mut(self)
    }
}

impl Mismatchable for SynapseParams<f64> {
    fn currents_mut(&mut self) -> Vec<&mut f64> {
        SynapseParams::currents_mut(self).into_iter().collect()
    }
}

impl Mismatchable for f64 {
    fn currents_mut(&mut self) -> Vec<&mut f64> {
        vec![self]
    }
}

impl<T: Mismatchable> Mismatchable for Vec<T> {
    fn currents_mut(&mut self) -> Vec<&mut f64> {
        self.iter_mut().flat_map(|x| x.currents_mut()).collect()
    }
}

impl MismatchSpec {
    pub fn validate(&self) -> Result<(), HwError> {
        if !(self.cv >= 0.0 && self.cv.is_finite()) {
            return Err(HwError::InvalidMismatch(format!("cv must be >= 0, got {}", self.cv)));
        }
        Ok(())
    }

    /// Independent generator for draw `stream`. ChaCha is counter based, so
    /// stream `k` yields the same numbers regardless of which other streams
    /// were used or in what order.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Draws one multiplier with mean 1 and coefficient of variation `cv`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.cv == 0.0 {
            return 1.0;
        }
        match self.distribution {
            MismatchDistribution::Lognormal => {
                let sigma = (1.0 + self.cv * self.cv).ln().sqrt();
                LogNormal::new(-0.5 * sigma * sigma, sigma).expect("finite sigma").sample(rng)
            }
            MismatchDistribution::TruncatedNormal => {
                let normal = Normal::new(1.0, self.cv).expect("finite cv");
                loop {
                    let m = normal.sample(rng);
                    if m > 0.0 {
                        return m;
                    }
                }
            }
        }
    }

    /// Perturbs every current of `item` in place using stream `stream`;
    /// results are floored at `floor`.
    pub fn apply<T: Mismatchable>(&self, item: &mut T, stream: u64, floor: f64) {
        if self.cv == 0.0 {
            return;
        }
        let mut rng = self.rng(stream);
        for c in item.currents_mut() {
            *c = (*c * self.draw(&mut rng)).max(floor);
        }
    }
}

/// Draws `n` independently perturbed copies of `nominal`.
///
/// Copy `i` depends only on `(spec.seed, i)`, so the result is identical
/// for any thread count.
pub fn sample_mismatch<T>(nominal: &T, spec: &MismatchSpec, n: usize, floor: f64) -> Result<Vec<T>, HwError>
where
    T: Mismatchable + Clone + Send + Sync,
{
    spec.validate()?;
    if n == 0 {
        return Err(HwError::InvalidMismatch("sample count must be >= 1".into()));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut item = nominal.clone();
            spec.apply(&mut item, i as u64, floor);
            item
        })
        .collect())
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 || xs.iter().all(|&x| x == xs[0]) {
        return (if xs.is_empty() { mean } else { xs[0] }, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpi_core::{PhysicalConstants, PICO};

    #[test]
    fn zero_cv_is_identity() {
        let c = PhysicalConstants::default();
        let p = NeuronParams::calibrated_dc(&c);
        let spec = MismatchSpec { cv: 0.0, ..Default::default() };
        for s in sample_mismatch(&p, &spec, 50, c.dark_current).unwrap() {
            assert_eq!(s, p);
        }
    }

    #[test]
    fn reproducible_and_floored() {
        let c = PhysicalConstants::default();
        let p = NeuronParams::calibrated_dc(&c);
        let spec = MismatchSpec { cv: 0.9, seed: 42, ..Default::default() };
        let a = sample_mismatch(&p, &spec, 200, c.dark_current).unwrap();
        let b = sample_mismatch(&p, &spec, 200, c.dark_current).unwrap();
        assert_eq!(a, b);
        for mut s in a {
            for x in s.currents_mut() {
                assert!(x.is_finite() && *x >= c.dark_current);
            }
        }
        let other = sample_mismatch(&p, &MismatchSpec { seed: 43, ..spec }, 1, c.dark_current).unwrap();
        let first = sample_mismatch(&p, &spec, 1, c.dark_current).unwrap();
        assert_ne!(other, first);
    }

    #[test]
    fn empirical_cv_lognormal() {
        let spec = MismatchSpec { cv: 0.2, seed: 7, ..Default::default() };
        let xs = sample_mismatch(&(4.1 * PICO), &spec, 10_000, 0.0).unwrap();
        let (m, s) = mean_std(&xs);
        assert!((m / (4.1 * PICO) - 1.0).abs() < 0.01);
        assert!((s / m - 0.2).abs() < 0.01, "cv {}", s / m);
    }

    #[test]
    fn truncated_normal_positive() {
        let spec = MismatchSpec { cv: 0.2, distribution: MismatchDistribution::TruncatedNormal, seed: 3 };
        let xs = sample_mismatch(&1.0, &spec, 5000, 0.0).unwrap();
        assert!(xs.iter().all(|&x| x > 0.0));
        let (m, s) = mean_std(&xs);
        assert!((s / m - 0.2).abs() < 0.015);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(sample_mismatch(&1.0, &MismatchSpec { cv: -0.1, ..Default::default() }, 3, 0.0).is_err());
        assert!(sample_mismatch(&1.0, &MismatchSpec::default(), 0, 0.0).is_err());
    }
}
