use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetworkError;

/// Boolean spike raster, stored step-major (`steps × channels`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTrain {
    pub channels: usize,
    pub steps: usize,
    data: Vec<bool>,
}

impl SpikeTrain {
    pub fn silent(channels: usize, steps: usize) -> Self {
        SpikeTrain { channels, steps, data: vec![false; channels * steps] }
    }

    pub fn at(&self, step: usize) -> &[bool] {
        &self.data[step * self.channels..(step + 1) * self.channels]
    }

    pub fn set(&mut self, step: usize, channel: usize, value: bool) {
        self.data[step * self.channels + channel] = value;
    }

    pub fn count(&self, channel: usize) -> usize {
        (0..self.steps).filter(|&s| self.at(s)[channel]).count()
    }

    pub fn total(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Places `other` in channels `offset..offset + other.channels`.
    pub fn overlay(&mut self, other: &SpikeTrain, offset: usize) -> Result<(), NetworkError> {
        if other.steps != self.steps || offset + other.channels > self.channels {
            return Err(NetworkError::Shape(format!(
                "cannot overlay {}x{} at channel {offset} onto {}x{}",
                other.steps, other.channels, self.steps, self.channels
            )));
        }
        for s in 0..self.steps {
            for (c, &b) in other.at(s).iter().enumerate() {
                if b {
                    self.set(s, offset + c, true);
                }
            }
        }
        Ok(())
    }

    /// Appends the steps of `other` (same channel count).
    pub fn extend(&mut self, other: &SpikeTrain) -> Result<(), NetworkError> {
        if other.channels != self.channels {
            return Err(NetworkError::Shape(format!("channel count {} != {}", other.channels, self.channels)));
        }
        self.data.extend_from_slice(&other.data);
        self.steps += other.steps;
        Ok(())
    }
}

/// Per-channel Poisson rate code.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonEncoder {
    /// Rates in Hz.
    pub rates: Vec<f64>,
    pub duration: f64,
    pub seed: u64,
}

impl PoissonEncoder {
    /// Channel `c` draws from its own ChaCha stream, so a channel's train does
    /// not depend on the other channels.
    pub fn generate(&self, dt: f64) -> Result<SpikeTrain, NetworkError> {
        if !(dt > 0.0 && dt.is_finite()) || !(self.duration >= 0.0) {
            return Err(NetworkError::Shape(format!("invalid dt {dt} or duration {}", self.duration)));
        }
        let steps = (self.duration / dt).round() as usize;
        let mut train = SpikeTrain::silent(self.rates.len(), steps);
        for (c, &rate) in self.rates.iter().enumerate() {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(NetworkError::Shape(format!("channel {c} has invalid rate {rate}")));
            }
            let p = rate * dt;
            if p > 1.0 {
                return Err(NetworkError::Undersampled { rate, dt });
            }
            if p == 0.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(c as u64);
            for s in 0..steps {
                if rng.random::<f64>() < p {
                    train.set(s, c, true);
                }
            }
        }
        Ok(train)
    }
}

/// Bernoulli(intensity·max_rate·dt) spikes per channel and step.
pub fn encode_poisson(
    values: &[f64],
    max_rate: f64,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<SpikeTrain, NetworkError> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(NetworkError::Shape(format!("intensity {v} outside [0, 1]")));
    }
    if max_rate * dt > 1.0 {
        return Err(NetworkError::Undersampled { rate: max_rate, dt });
    }
    PoissonEncoder { rates: values.iter().map(|v| v * max_rate).collect(), duration, seed }.generate(dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_intensity_is_silent() {
        let t = encode_poisson(&[0.0; 8], 100.0, 1.0, 1e-4, 1).unwrap();
        assert_eq!(t.total(), 0);
        assert_eq!(t.steps, 10_000);
    }

    #[test]
    fn full_intensity_rate() {
        let t = encode_poisson(&[1.0], 100.0, 10.0, 1e-4, 5).unwrap();
        let rate = t.count(0) as f64 / 10.0;
        assert!((rate - 100.0).abs() <= 3.0 * (100.0f64 / 10.0).sqrt(), "{rate}");
    }

    #[test]
    fn count_grows_linearly_with_duration() {
        let values: Vec<f64> = (0..32).map(|i| i as f64 / 31.0).collect();
        let durations = [1.0, 2.0, 3.0, 4.0, 5.0];
        let counts: Vec<f64> =
            durations.iter().map(|&d| encode_poisson(&values, 100.0, d, 1e-3, 9).unwrap().total() as f64).collect();
        // least-squares slope and intercept
        let n = durations.len() as f64;
        let mx = durations.iter().sum::<f64>() / n;
        let my = counts.iter().sum::<f64>() / n;
        let sxy: f64 = durations.iter().zip(&counts).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = durations.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        let expected = values.iter().sum::<f64>() * 100.0;
        assert!((slope / expected - 1.0).abs() < 0.05, "slope {slope} vs {expected}");
        assert!((my - slope * mx).abs() < 0.05 * expected);
    }

    #[test]
    fn deterministic_and_checked() {
        let a = encode_poisson(&[0.3, 0.7], 100.0, 1.0, 1e-3, 2).unwrap();
        assert_eq!(a, encode_poisson(&[0.3, 0.7], 100.0, 1.0, 1e-3, 2).unwrap());
        assert_ne!(a, encode_poisson(&[0.3, 0.7], 100.0, 1.0, 1e-3, 3).unwrap());
        assert!(matches!(encode_poisson(&[1.0], 2000.0, 1.0, 1e-3, 0), Err(NetworkError::Undersampled { .. })));
        assert!(encode_poisson(&[1.5], 100.0, 1.0, 1e-3, 0).is_err());
    }
}
