//! Encoder-only transformer for token classification: parameters,
//! forward and backward passes, AdamW training with early stopping,
//! windowed inference and checkpoints.

mod checkpoint;
mod forward;
mod params;
mod train;

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, TensorRecord};
pub use forward::{forward, loss, loss_and_grad, predict_ids, predict_logits};
pub use params::{Params, TensorInfo};
pub use train::{
    train, AdamW, EarlyStopping, EvalRecord, StopDecision, TraceOutcome, TrainOutcome,
};

/// Floating-point types the model runs in: `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Default
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + LinalgScalar
        + ScalarOperand
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Send
        + Sync
        + Debug
        + Default
        + 'static
{
}

pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub n_labels: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            max_seq_len: 512,
            n_labels: 0,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.n_labels == 0 {
            return fail("vocab_size and n_labels must be positive".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return fail("model dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub min_crop: usize,
    /// Upper crop length; the model's `max_seq_len` when absent.
    pub max_crop: Option<usize>,
    /// Global gradient-norm clip; none when absent.
    pub max_grad_norm: Option<f64>,
    pub seeds: Vec<u64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            max_steps: 7500,
            eval_every: 300,
            patience: 5,
            batch_size: 8,
            min_crop: 64,
            max_crop: None,
            max_grad_norm: Some(1.0),
            seeds: vec![1, 2, 3],
        }
    }
}

impl TrainHyper {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return fail("learning rate must be positive and weight decay non-negative");
        }
        if self.max_steps == 0 || self.eval_every == 0 || self.patience == 0 || self.batch_size == 0 {
            return fail("max_steps, eval_every, patience and batch_size must be positive");
        }
        if self.min_crop == 0 || self.min_crop > self.max_crop(config) {
            return fail("crop lengths must satisfy 0 < min_crop <= max_crop");
        }
        if self.max_crop(config) > config.max_seq_len {
            return fail("max_crop exceeds the model's max_seq_len");
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return fail("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn max_crop(&self, config: &ModelConfig) -> usize {
        self.max_crop.unwrap_or(config.max_seq_len)
    }
}
