use super::model::{Gradients, MlpModel, ParamKind};
use super::TrainConfig;

pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Index of the last step taken.
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.parameters().iter().map(|(_, _, d)| vec![0.0; d.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam update at step `t` (1-based) with learning rate `lr`.
///
/// Weight decay is added to the gradient before the moments. Afterwards every
/// weight row is projected back onto the `max_norm` ball.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState, t: u64, lr: f64, tc: &TrainConfig) {
    assert!(t >= 1, "Adam steps are 1-based");
    let (b1, b2, wd) = (tc.beta1, tc.beta2, tc.weight_decay);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, g), m), v) in model
        .parameters_mut()
        .into_iter()
        .zip(&grads.0)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi + wd * *w;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    state.t = t;
    apply_max_norm(model);
}

/// Rescales every weight row whose Euclidean norm exceeds `max_norm`.
pub fn apply_max_norm(model: &mut MlpModel) {
    let max_norm = model.config.max_norm;
    for p in model.parameters_mut() {
        if let ParamKind::Weight { cols, .. } = p.kind {
            for row in p.data.chunks_exact_mut(cols) {
                let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
                if norm > max_norm {
                    let s = max_norm / norm;
                    row.iter_mut().for_each(|w| *w *= s);
                }
            }
        }
    }
}
