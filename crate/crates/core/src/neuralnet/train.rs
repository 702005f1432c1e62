use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{MlpModel, Mode};
use super::optim::{adam_step, AdamState};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::par::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean over every output element of the squared error.
    Mse,
    /// Mean over rows of softmax cross-entropy against probability targets.
    SoftmaxCrossEntropy,
}

/// Loss value and its gradient with respect to `out`.
pub fn loss_and_grad(loss: Loss, out: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    match loss {
        Loss::Mse => {
            let diff = out - target;
            let n = diff.len() as f64;
            let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
            (value, diff * (2.0 / n))
        }
        Loss::SoftmaxCrossEntropy => {
            let rows = out.nrows() as f64;
            let mut probs = out.clone();
            let mut value = 0.0;
            for (mut p, t) in probs.rows_mut().into_iter().zip(target.rows()) {
                let max = p.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                p.mapv_inplace(|v| (v - max).exp());
                let z = p.sum();
                p /= z;
                value -= t
                    .iter()
                    .zip(p.iter())
                    .filter(|(&ti, _)| ti != 0.0)
                    .map(|(&ti, &pi)| ti * pi.max(1e-300).ln())
                    .sum::<f64>();
            }
            let grad = (probs - target) / rows;
            (value / rows, grad)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean training-mode batch loss per epoch.
    pub history: Vec<f64>,
    pub steps: u64,
}

/// Mini-batch Adam training. The shuffle order and dropout masks derive
/// from `tc.seed`, so identical inputs give identical weights.
///
/// A trailing batch with a single row is skipped unless it is the only data.
pub fn train(
    model: &mut MlpModel,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    tc: &TrainConfig,
    loss: Loss,
) -> Result<TrainReport> {
    tc.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if targets.nrows() != n || targets.ncols() != model.config.output_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} x {}", model.config.output_dim),
            found: format!("{} x {}", targets.nrows(), targets.ncols()),
        });
    }
    if inputs.ncols() != model.config.input_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} x {}", model.config.input_dim),
            found: format!("{} x {}", inputs.nrows(), inputs.ncols()),
        });
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, 1));
    let mut state = AdamState::new(model);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();

    for epoch in 0..tc.epochs {
        let lr = tc.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(tc.batch_size) {
            if idx.len() < 2 && n > 1 {
                continue;
            }
            let x = inputs.select(Axis(0), idx);
            let y = targets.select(Axis(0), idx);
            let (out, cache) = model.forward(&x, Mode::Train(&mut dropout_rng))?;
            let (value, grad) = loss_and_grad(loss, &out, &y);
            let grads = model.backward(&cache.expect("training cache"), &grad);
            report.steps += 1;
            adam_step(model, &grads, &mut state, report.steps, lr, tc);
            total += value;
            batches += 1;
        }
        report.history.push(total / batches.max(1) as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::MlpConfig;
    use super::*;
    use rand::Rng;

    fn data(n: usize, din: usize, dout: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Array2::from_shape_fn((n, din), |_| rng.random_range(-1.0..1.0)),
            Array2::from_shape_fn((n, dout), |_| rng.random_range(-1.0..1.0)),
        )
    }

    fn cfg() -> MlpConfig {
        MlpConfig {
            input_dim: 8,
            hidden_dim: 64,
            n_residual_blocks: 2,
            output_dim: 6,
            dropout_rate: 0.0,
            max_norm: 1.0,
            seed: 5,
            tail_dims: vec![],
        }
    }

    #[test]
    fn memorizes_small_set() {
        let (x, y) = data(64, 8, 6, 1);
        let mut m = MlpModel::init_kaiming(&cfg()).unwrap();
        let tc = TrainConfig {
            epochs: 500,
            lr_decay: 1.0,
            weight_decay: 0.0,
            seed: 2,
            ..TrainConfig::default()
        };
        let report = train(&mut m, &x, &y, &tc, Loss::Mse).unwrap();
        assert_eq!(report.history.len(), 500);
        let last = *report.history.last().unwrap();
        assert!(last < 1e-3, "final train MSE {last}");
    }

    #[test]
    fn zero_epochs_is_noop() {
        let (x, y) = data(10, 8, 6, 1);
        let mut m = MlpModel::init_kaiming(&cfg()).unwrap();
        let before = m.clone();
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &x, &y, &tc, Loss::Mse).unwrap();
        assert!(r.history.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn deterministic() {
        let (x, y) = data(100, 8, 6, 3);
        let mut c = cfg();
        c.dropout_rate = 0.5;
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = MlpModel::init_kaiming(&c).unwrap();
        let mut b = MlpModel::init_kaiming(&c).unwrap();
        let ra = train(&mut a, &x, &y, &tc, Loss::Mse).unwrap();
        let rb = train(&mut b, &x, &y, &tc, Loss::Mse).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn empty_dataset() {
        let mut m = MlpModel::init_kaiming(&cfg()).unwrap();
        let r = train(&mut m, &Array2::zeros((0, 8)), &Array2::zeros((0, 6)), &TrainConfig::default(), Loss::Mse);
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let (out, _) = data(3, 4, 1, 8);
        let target = ndarray::array![[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let (_, g) = loss_and_grad(Loss::SoftmaxCrossEntropy, &out, &target);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut p = out.clone();
                p[[i, j]] += h;
                let mut q = out.clone();
                q[[i, j]] -= h;
                let fd = (loss_and_grad(Loss::SoftmaxCrossEntropy, &p, &target).0
                    - loss_and_grad(Loss::SoftmaxCrossEntropy, &q, &target).0)
                    / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }
}
