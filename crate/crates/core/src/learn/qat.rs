use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, LearnError};
use crate::autodiff::{Scalar, Tape, Var};

/// Fan-in penalty weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegSpec {
    pub l1_lambda: f64,
    pub l2_lambda: f64,
    /// Target total synapse count per neuron.
    pub target_fanin: f64,
    /// Penalize each weight against the target instead of each row sum.
    #[serde(default)]
    pub per_weight: bool,
}

impl Default for RegSpec {
    fn default() -> Self {
        RegSpec { l1_lambda: 0.0, l2_lambda: 0.0, target_fanin: 64.0, per_weight: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QatSpec {
    pub enabled: bool,
    pub fan_in_limit: usize,
    #[serde(default)]
    pub reg: RegSpec,
}

impl Default for QatSpec {
    fn default() -> Self {
        QatSpec { enabled: true, fan_in_limit: 64, reg: RegSpec::default() }
    }
}

impl QatSpec {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.fan_in_limit < 1 {
            return Err(LearnError::Config("fan_in_limit must be >= 1".into()));
        }
        let r = &self.reg;
        if !(r.l1_lambda >= 0.0 && r.l2_lambda >= 0.0 && r.target_fanin.is_finite()) {
            return Err(LearnError::Config("regularizer weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Rounded forward values with an identity backward pass.
pub fn fake_quantize_forward<S: Scalar>(w: &[S]) -> Vec<S> {
    w.iter().map(|&x| x.round_ste()).collect()
}

/// `Σ_rows λ₁·|Σ_row W − C| + λ₂·(Σ_row W − C)²` over `rows` (each row is one
/// postsynaptic neuron's incoming weights). With `per_weight` the same
/// terms are applied to every entry instead of the row sum.
pub fn fanin_regularizer<S: Scalar>(rows: &[Vec<S>], reg: &RegSpec) -> S {
    let mut total = S::from_f64(0.0);
    if reg.l1_lambda == 0.0 && reg.l2_lambda == 0.0 {
        return total;
    }
    let mut term = |x: S| {
        let d = x - reg.target_fanin;
        total = total + d.abs() * reg.l1_lambda + d * d * reg.l2_lambda;
    };
    for row in rows {
        if reg.per_weight {
            row.iter().for_each(|&w| term(w));
        } else {
            let terms: Vec<(S, f64)> = row.iter().map(|&w| (w, 1.0)).collect();
            term(S::weighted_sum(&terms));
        }
    }
    total
}

/// Spreads the remaining budget over a row and rounds it again.
///
/// Per row: `C = (fanin − Σ round(W)) / N`, `W' = round(W + C)`, negatives
/// clamped to zero. Rounding the shifted row can overshoot the budget (for
/// `[1.2, 2.6, 0.4]` and `fanin = 5` it gives `[2, 3, 1]`); the excess is then
/// taken back from the entries that were rounded up the most, so every row
/// ends with `Σ W' ≤ fanin`.
pub fn fanin_final_adjust(rows: &[Vec<f64>], fanin: usize) -> Result<Vec<Vec<u32>>, LearnError> {
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            if let Some(w) = row.iter().find(|w| !w.is_finite()) {
                return Err(LearnError::Infeasible { row: r, reason: format!("weight {w}") });
            }
            if row.is_empty() {
                return Ok(Vec::new());
            }
            let rounded: f64 = row.iter().map(|&w| round_half_away(w)).sum();
            let c = (fanin as f64 - rounded) / row.len() as f64;
            let shifted: Vec<f64> = row.iter().map(|&w| w + c).collect();
            let mut out: Vec<u32> = shifted.iter().map(|&x| round_half_away(x).max(0.0) as u32).collect();
            let mut excess = out.iter().map(|&x| x as u64).sum::<u64>().saturating_sub(fanin as u64);
            if excess > 0 {
                // how far each entry was rounded up; ties go to the lower index
                let mut order: Vec<usize> = (0..row.len()).filter(|&i| out[i] > 0).collect();
                order.sort_by(|&a, &b| {
                    let ma = out[a] as f64 - shifted[a];
                    let mb = out[b] as f64 - shifted[b];
                    mb.total_cmp(&ma).then(a.cmp(&b))
                });
                for &i in order.iter().cycle() {
                    if excess == 0 {
                        break;
                    }
                    if out[i] > 0 {
                        out[i] -= 1;
                        excess -= 1;
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Removes synapses from the smallest non-zero entries first until each row
/// total is at most `limit`. Never increases an entry.
pub fn prune_to_fanin(rows: &[Vec<u32>], limit: usize) -> Vec<Vec<u32>> {
    rows.iter()
        .map(|row| {
            let mut out = row.clone();
            let mut excess = out.iter().map(|&x| x as u64).sum::<u64>().saturating_sub(limit as u64);
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by_key(|&i| (row[i], i));
            for i in order {
                if excess == 0 {
                    break;
                }
                let take = (out[i] as u64).min(excess);
                out[i] -= take as u32;
                excess -= take;
            }
            out
        })
        .collect()
}

/// Linear least-squares fit `y ≈ X·w` trained with fake-quantized weights.
///
/// The forward pass always uses `round(w)`, so the loss is piecewise constant
/// in `w` and the straight-through gradient keeps pushing the real weights
/// across rounding boundaries near the optimum. The integer weights with the
/// lowest training loss seen along the way are returned.
pub fn qat_linear_regression(
    x: &[Vec<f64>],
    y: &[f64],
    config: AdamConfig,
    steps: usize,
) -> Result<Vec<i64>, LearnError> {
    let n = x.first().map_or(0, Vec::len);
    if x.is_empty() || x.len() != y.len() || x.iter().any(|r| r.len() != n) {
        return Err(LearnError::Config("regression data shape mismatch".into()));
    }
    let mut w = vec![0.0; n];
    let mut adam = Adam::new(config, n);
    let mut best: Option<(f64, Vec<i64>)> = None;
    for _ in 0..steps {
        let tape = Tape::new();
        let vars: Vec<Var> = w.iter().map(|&v| tape.var(v)).collect();
        let q = fake_quantize_forward(&vars);
        let mut sq = Vec::with_capacity(y.len());
        for (row, &target) in x.iter().zip(y) {
            let terms: Vec<(Var, f64)> = q.iter().zip(row).map(|(&wi, &xi)| (wi, xi)).collect();
            let r = Var::weighted_sum(&terms) - target;
            sq.push((r * r, 1.0 / y.len() as f64));
        }
        let loss = Var::weighted_sum(&sq);
        let ints: Vec<i64> = q.iter().map(|v| v.value() as i64).collect();
        if best.as_ref().is_none_or(|(l, _)| loss.value() < *l) {
            best = Some((loss.value(), ints));
        }
        let g = tape.backward(loss)?;
        let grad: Vec<f64> = vars.iter().map(|v| g.wrt(v)).collect();
        adam.step(&mut w, &grad)?;
    }
    Ok(best.map(|(_, w)| w).unwrap_or_else(|| vec![0; n]))
}

fn round_half_away(x: f64) -> f64 {
    crate::autodiff::round_half_away(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_forward() {
        let tape = Tape::new();
        let w = [tape.var(2.6), tape.var(3.0), tape.var(-0.5)];
        let q = fake_quantize_forward(&w);
        assert_eq!(q.iter().map(|v| v.value()).collect::<Vec<_>>(), vec![3.0, 3.0, -1.0]);
        let out = Var::weighted_sum(&[(q[0], 1.0), (q[1], 2.0), (q[2], 3.0)]);
        let g = tape.backward(out).unwrap();
        assert_eq!([g.wrt(&w[0]), g.wrt(&w[1]), g.wrt(&w[2])], [1.0, 2.0, 3.0]);
    }

    #[test]
    fn regularizer_values() {
        let reg = RegSpec { l1_lambda: 0.5, l2_lambda: 0.25, target_fanin: 4.0, per_weight: false };
        assert_eq!(fanin_regularizer(&[vec![1.0, 3.0], vec![4.0, 0.0]], &reg), 0.0);
        let off = RegSpec { l1_lambda: 0.0, l2_lambda: 0.0, ..reg };
        assert_eq!(fanin_regularizer(&[vec![10.0, 3.0]], &off), 0.0);
        // rows sum to 6 and 1: 0.5·2 + 0.25·4 + 0.5·3 + 0.25·9
        let v = fanin_regularizer(&[vec![2.5, 3.5], vec![0.25, 0.75]], &reg);
        assert!((v - (1.0 + 1.0 + 1.5 + 2.25)).abs() < 1e-12);
        let pw = RegSpec { per_weight: true, ..reg };
        let v = fanin_regularizer(&[vec![5.0, 2.0]], &pw);
        assert!((v - (0.5 + 0.25 + 1.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradient_matches_fd() {
        let reg = RegSpec { l1_lambda: 0.3, l2_lambda: 0.7, target_fanin: 3.0, per_weight: false };
        let w0 = [0.4, 1.9, 2.2, 0.1, 0.05, 0.3];
        let f = |w: &[f64]| fanin_regularizer(&[w[..3].to_vec(), w[3..].to_vec()], &reg);
        let tape = Tape::new();
        let vars: Vec<Var> = w0.iter().map(|&x| tape.var(x)).collect();
        let out = fanin_regularizer(&[vars[..3].to_vec(), vars[3..].to_vec()], &reg);
        let g = tape.backward(out).unwrap();
        for i in 0..6 {
            let h = 1e-6;
            let mut a = w0;
            let mut b = w0;
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((g.wrt(&vars[i]) - fd).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn final_adjust_examples() {
        // row already at budget: unchanged after rounding
        assert_eq!(fanin_final_adjust(&[vec![1.2, 2.6, 1.4]], 5).unwrap(), vec![vec![1, 3, 1]]);
        // the shifted row rounds to [2, 3, 1]; the largest round-up (1.53 -> 2) gives one back
        assert_eq!(fanin_final_adjust(&[vec![1.2, 2.6, 0.4]], 5).unwrap(), vec![vec![1, 3, 1]]);
        assert_eq!(fanin_final_adjust(&[vec![0.0, 0.0]], 0).unwrap(), vec![vec![0, 0]]);
        assert!(fanin_final_adjust(&[vec![f64::NAN]], 3).is_err());
    }

    #[test]
    fn prune_examples() {
        assert_eq!(prune_to_fanin(&[vec![40, 30]], 64), vec![vec![40, 24]]);
        assert_eq!(prune_to_fanin(&[vec![10, 3]], 64), vec![vec![10, 3]]);
        assert_eq!(prune_to_fanin(&[vec![5, 1, 2]], 4), vec![vec![4, 0, 0]]);
    }

    proptest! {
        #[test]
        fn final_adjust_respects_budget(row in prop::collection::vec(0.0f64..6.0, 1..40), fanin in 0usize..100) {
            let out = fanin_final_adjust(&[row], fanin).unwrap();
            prop_assert!(out[0].iter().map(|&x| x as usize).sum::<usize>() <= fanin);
        }

        #[test]
        fn prune_is_idempotent_and_bounded(row in prop::collection::vec(0u32..20, 0..50), limit in 0usize..80) {
            let once = prune_to_fanin(std::slice::from_ref(&row), limit);
            prop_assert!(once[0].iter().map(|&x| x as usize).sum::<usize>() <= limit);
            prop_assert!(once[0].iter().zip(&row).all(|(a, b)| a <= b));
            prop_assert_eq!(prune_to_fanin(&once, limit), once);
        }
    }
}
