use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Multiplicative learning-rate decay per optimizer step.
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_decay() -> f64 {
    1.0
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: 1.0 }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(LearnError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Adam { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr * self.config.decay.powi(self.t as i32)
    }

    /// One descent step on `x` given the gradient `g`.
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<(), LearnError> {
        if x.len() != self.m.len() || g.len() != self.m.len() {
            return Err(LearnError::Config(format!("optimizer sized for {} parameters", self.m.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFiniteGradient);
        }
        let lr = self.lr();
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// How a parameter is represented inside the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Linear,
    /// The optimizer moves `ln(value)`, which keeps currents positive.
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParam {
    pub name: String,
    pub value: f64,
    pub domain: Domain,
    pub min: f64,
    pub max: f64,
}

impl TrainParam {
    pub fn current(name: &str, value: f64, min: f64) -> Self {
        TrainParam { name: name.to_string(), value, domain: Domain::Log, min, max: f64::INFINITY }
    }

    fn to_internal(&self) -> f64 {
        match self.domain {
            Domain::Linear => self.value,
            Domain::Log => self.value.ln(),
        }
    }

    fn to_external(&self, x: f64) -> f64 {
        let v = match self.domain {
            Domain::Linear => x,
            Domain::Log => x.exp(),
        };
        v.clamp(self.min, self.max)
    }
}

/// Result of evaluating the objective at one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Task metric logged next to the loss (rate, accuracy, ...).
    pub metric: f64,
    /// d loss / d value, one entry per parameter.
    pub grad: Vec<f64>,
    /// Stop training after this evaluation.
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub metric: f64,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,loss,metric";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{:.9e},{:.9e}", r.epoch, r.loss, r.metric);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<TrainParam>,
    pub history: Vec<HistoryRow>,
    /// Evaluations performed (including the converged one).
    pub epochs: usize,
    pub converged: bool,
}

/// Minimizes `objective` with Adam for at most `epochs` evaluations.
///
/// Each epoch evaluates the objective at the current values and takes one
/// step; values are projected back into `[min, max]`. Training stops early
/// when the objective reports convergence, and the returned parameters are
/// those of the last evaluation.
pub fn train_parameters<F>(
    mut params: Vec<TrainParam>,
    config: AdamConfig,
    epochs: usize,
    mut objective: F,
) -> Result<TrainOutcome, LearnError>
where
    F: FnMut(&[f64], usize) -> Result<Evaluation, LearnError>,
{
    config.validate()?;
    let mut adam = Adam::new(config, params.len());
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let values: Vec<f64> = params.iter().map(|p| p.value).collect();
        let eval = objective(&values, epoch)?;
        if !eval.loss.is_finite() {
            return Err(LearnError::Diverged { epoch });
        }
        history.push(HistoryRow { epoch, loss: eval.loss, metric: eval.metric });
        if eval.converged {
            return Ok(TrainOutcome { params, history, epochs: epoch + 1, converged: true });
        }
        // chain rule into the optimizer's coordinates
        let g: Vec<f64> = params
            .iter()
            .zip(&eval.grad)
            .map(|(p, &g)| match p.domain {
                Domain::Linear => g,
                Domain::Log => g * p.value,
            })
            .collect();
        let mut x: Vec<f64> = params.iter().map(TrainParam::to_internal).collect();
        adam.step(&mut x, &g).map_err(|e| match e {
            LearnError::NonFiniteGradient => LearnError::Diverged { epoch },
            other => other,
        })?;
        for (i, (p, xi)) in params.iter_mut().zip(x).enumerate() {
            // a parameter that has never seen a gradient keeps its exact value
            if adam.m[i] != 0.0 {
                p.value = p.to_external(xi);
            }
        }
    }
    Ok(TrainOutcome { params, history, epochs, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges() {
        let p = vec![TrainParam { name: "x".into(), value: 5.0, domain: Domain::Linear, min: -10.0, max: 10.0 }];
        let out = train_parameters(p, AdamConfig::with_lr(0.1), 500, |v, _| {
            Ok(Evaluation {
                loss: (v[0] - 2.0).powi(2),
                metric: v[0],
                grad: vec![2.0 * (v[0] - 2.0)],
                converged: false,
            })
        })
        .unwrap();
        assert!((out.params[0].value - 2.0).abs() < 1e-2);
        assert_eq!(out.history.len(), 500);
    }

    #[test]
    fn log_domain_stays_positive_and_respects_bounds() {
        let p = vec![TrainParam::current("i", 1e-12, 0.5e-12)];
        // objective pulls the value towards zero
        let out = train_parameters(p, AdamConfig::with_lr(0.5), 50, |v, _| {
            Ok(Evaluation { loss: v[0] * 1e12, metric: 0.0, grad: vec![1e12], converged: false })
        })
        .unwrap();
        assert_eq!(out.params[0].value, 0.5e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let p = vec![TrainParam::current("i", 4.1e-12, 0.5e-12)];
        let out = train_parameters(p, AdamConfig::with_lr(0.01), 1, |_, _| {
            Ok(Evaluation { loss: 0.0, metric: 0.0, grad: vec![0.0], converged: false })
        })
        .unwrap();
        assert_eq!(out.params[0].value, 4.1e-12);
    }

    #[test]
    fn divergence_reports_epoch() {
        let p = vec![TrainParam { name: "x".into(), value: 1.0, domain: Domain::Linear, min: -1.0, max: 1.0 }];
        let err = train_parameters(p, AdamConfig::with_lr(0.1), 10, |_, e| {
            Ok(Evaluation { loss: if e == 3 { f64::NAN } else { 1.0 }, metric: 0.0, grad: vec![1.0], converged: false })
        })
        .unwrap_err();
        assert_eq!(err, LearnError::Diverged { epoch: 3 });
        assert!(history_csv(&[HistoryRow { epoch: 0, loss: 1.0, metric: 2.0 }]).starts_with("epoch,loss,metric\n0,"));
    }
}
