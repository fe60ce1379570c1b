//! Compact transformer encoder for quantile forecasting, with its own
//! reverse-mode differentiation, Adam/cosine/EMA training loop, and a
//! finite-difference gradient check.
//!
//! The architecture is fixed: a learned scalar-to-vector embedding plus
//! learned positional embeddings, `L` pre-norm encoder layers (multi-head
//! self-attention and a GELU feedforward, both with residuals), a final
//! layer norm, and a linear readout from the last time position producing
//! `H x |T|` raw outputs. Raw outputs become monotone quantiles via a base
//! value plus softplus increments.

mod checkpoint;
mod net;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use net::{
    forward, pinball_loss, pinball_loss_grad, softplus, to_quantiles, to_quantiles_into, Workspace,
};
pub use params::{ModelParams, ParamLayout};
pub use train::{
    batch_loss, batch_loss_and_grad, cosine_lr, grad_check, train, validation_loss, TrainLogRow,
    TrainResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Architecture dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Input context length C.
    pub context: usize,
    /// Forecast horizon H.
    pub horizon: usize,
    /// Quantile levels per horizon.
    pub n_quantiles: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 256, n_layers: 2, n_heads: 4, d_ff: 512, context: 20, horizon: 4, n_quantiles: 27 }
    }
}

impl ModelConfig {
    /// Desk-scale defaults: same shape, narrow width.
    pub fn desk() -> Self {
        Self { d_model: 32, d_ff: 64, ..Self::default() }
    }

    pub fn outputs(&self) -> usize {
        self.horizon * self.n_quantiles
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("context", self.context),
            ("horizon", self.horizon),
            ("n_quantiles", self.n_quantiles),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Optimization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Total weight updates.
    pub updates: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub ema_alpha: f64,
    /// Nominal batch size; input perturbation doubles the effective size.
    pub batch_size: usize,
    /// Frozen validation windows to sample.
    pub val_windows: usize,
    /// Evaluate validation loss every this many updates.
    pub val_every: usize,
    /// Reserve whole series for validation when at least this many exist.
    pub min_series_for_split: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            updates: 2_000,
            lr_start: 5e-4,
            lr_end: 5e-5,
            ema_alpha: 0.98,
            batch_size: 64,
            val_windows: 2_048,
            val_every: 200,
            min_series_for_split: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.updates == 0 {
            return Err(ModelError::BadConfig("updates must be at least 1".into()));
        }
        if !(0.0 < self.lr_end && self.lr_end <= self.lr_start) {
            return Err(ModelError::BadConfig("need 0 < lr_end <= lr_start".into()));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(ModelError::BadConfig("need 0 <= ema_alpha < 1".into()));
        }
        if self.batch_size == 0 || self.val_windows == 0 || self.val_every == 0 {
            return Err(ModelError::BadConfig("batch/validation sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("input length {got} does not match context {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite input at position {0}")]
    NonFiniteInput(usize),
    #[error("quantile grid size {grid} does not match model outputs {model}")]
    GridMismatch { grid: usize, model: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}
