//! A small fixed-topology feedforward engine: dense units
//! (linear, batch norm, ReLU, dropout), identity-skip residual blocks,
//! Kaiming initialization, Adam with L2 weight decay, max-norm projection
//! and exponential learning-rate decay.

mod io;
mod model;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{ModelFile, Tensor, MODEL_FORMAT_VERSION};
pub use model::{Cache, Gradients, Mode, MlpModel, ParamKind, ParamMut, BN_EPS, BN_MOMENTUM};
pub use optim::{adam_step, apply_max_norm, AdamState, ADAM_EPS};
pub use train::{loss_and_grad, train, Loss, TrainReport};

/// Network shape. The trunk is a stem dense unit of width `hidden_dim`,
/// `n_residual_blocks` two-unit residual blocks, then one dense unit per
/// entry of `tail_dims`, then a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_residual_blocks: usize,
    pub output_dim: usize,
    pub dropout_rate: f64,
    pub max_norm: f64,
    pub seed: u64,
    #[serde(default)]
    pub tail_dims: Vec<usize>,
}

impl MlpConfig {
    /// Lifting-network defaults: width 1024, two residual blocks, dropout 0.5.
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_dim: 1024,
            n_residual_blocks: 2,
            output_dim,
            dropout_rate: 0.5,
            max_norm: 1.0,
            seed: 0,
            tail_dims: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 || self.tail_dims.contains(&0) {
            return bad("network dimensions must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.max_norm > 0.0) {
            return bad("max_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            lr_decay: 0.96,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }
}
