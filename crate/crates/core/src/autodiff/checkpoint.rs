//! Segment checkpointing for long simulations.
//!
//! The forward pass keeps only the state vector at segment boundaries. The
//! backward pass replays one segment at a time on a fresh tape, so peak tape
//! size is bounded by the longest segment rather than the whole run.

use super::{AutodiffError, Tape, Var};

/// Output of one segment: the state handed to the next segment and the loss
/// contribution accumulated inside this segment.
pub struct SegmentOutput<'t> {
    pub state: Vec<Var<'t>>,
    pub loss: Var<'t>,
}

/// Loss and gradient of a segmented computation.
#[derive(Clone, Debug)]
pub struct SegmentedGradient {
    pub loss: f64,
    pub params: Vec<f64>,
    pub initial_state: Vec<f64>,
}

/// Differentiates `Σ_k loss_k` where segment `k` maps
/// `(params, state_k) -> (state_{k+1}, loss_k)`.
///
/// `segment` must be a pure function of its arguments; it is evaluated twice
/// per segment (forward and replay).
pub fn checkpointed_gradient<E, F>(
    params: &[f64],
    initial_state: &[f64],
    segments: usize,
    mut segment: F,
) -> Result<SegmentedGradient, E>
where
    E: From<AutodiffError>,
    F: for<'t> FnMut(&'t Tape, &[Var<'t>], &[Var<'t>], usize) -> Result<SegmentOutput<'t>, E>,
{
    let mut boundaries = Vec::with_capacity(segments + 1);
    boundaries.push(initial_state.to_vec());
    let mut loss = 0.0;
    for k in 0..segments {
        let tape = Tape::new();
        let p: Vec<Var> = params.iter().map(|&v| Var::constant(v)).collect();
        let s: Vec<Var> = boundaries[k].iter().map(|&v| Var::constant(v)).collect();
        let out = segment(&tape, &p, &s, k)?;
        loss += out.loss.value();
        boundaries.push(out.state.iter().map(|v| v.value()).collect());
    }

    let mut grad_params = vec![0.0; params.len()];
    let mut state_adjoint = vec![0.0; initial_state.len()];
    for k in (0..segments).rev() {
        let tape = Tape::new();
        tape.mark_checkpoint();
        let p: Vec<Var> = params.iter().map(|&v| tape.var(v)).collect();
        let s: Vec<Var> = boundaries[k].iter().map(|&v| tape.var(v)).collect();
        let out = segment(&tape, &p, &s, k)?;
        if out.state.len() != state_adjoint.len() {
            return Err(AutodiffError::ArityMismatch { parents: out.state.len(), partials: state_adjoint.len() }.into());
        }
        let mut seeds = Vec::with_capacity(out.state.len() + 1);
        seeds.push((out.loss, 1.0));
        seeds.extend(out.state.iter().copied().zip(state_adjoint.iter().copied()));
        let grads = tape.backward_seeded(&seeds)?;
        for (g, v) in grad_params.iter_mut().zip(&p) {
            *g += grads.wrt(v);
        }
        state_adjoint = s.iter().map(|v| grads.wrt(v)).collect();
    }
    Ok(SegmentedGradient { loss, params: grad_params, initial_state: state_adjoint })
}
