//! AdamW with decoupled weight decay, plus the plateau learning-rate
//! schedule and early-stopping bookkeeping shared by every training loop.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Moment estimates and step count for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[&Tensor]) -> Result<Self> {
        if config.lr <= 0.0 || !config.lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate must be > 0, got {}", config.lr)));
        }
        Ok(Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    /// Multiplies the learning rate by `factor` (0 < factor <= 1).
    pub fn decay_lr(&mut self, factor: f64) {
        debug_assert!(factor > 0.0 && factor <= 1.0);
        self.config.lr *= factor;
    }
}

/// One AdamW update in place.
///
/// The decay term uses the parameter value from before this step's Adam
/// update: `w <- w - lr*wd*w - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(shape_err(
            "adamw_step",
            format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first[i].len() != p.numel() {
            return Err(shape_err(
                "adamw_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let decayed = *w - c.lr * c.weight_decay * *w;
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w = decayed - c.lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
    Ok(())
}

/// Reduce-on-plateau schedule: after more than `patience` consecutive
/// epochs without a relative improvement of `threshold`, multiply the
/// learning rate by `factor` and reset the counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records a validation loss; returns true when the rate was reduced.
    pub fn observe(&mut self, val_loss: f64, state: &mut OptimizerState) -> bool {
        if val_loss < self.best * (1.0 - self.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            state.decay_lr(self.factor);
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// Optimizer, schedule and stopping settings shared by the training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    /// Plateau schedule: multiply the learning rate by `lr_factor` after
    /// `lr_patience` epochs without validation improvement.
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub stop_patience: usize,
    pub val_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            batch_size: 256,
            lr_factor: 0.95,
            lr_patience: 5,
            min_epochs: 5,
            max_epochs: 30,
            stop_patience: 10,
            val_fraction: 0.2,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.min_epochs == 0 || self.min_epochs > self.max_epochs {
            return Err(Error::Invalid(format!(
                "need batch_size >= 1 and 1 <= min_epochs <= max_epochs: {self:?}"
            )));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::Invalid(format!("lr_factor must be in (0, 1], got {}", self.lr_factor)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Invalid(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(min_epochs: usize, max_epochs: usize, patience: usize) -> Self {
        Self {
            min_epochs,
            max_epochs,
            patience,
            best: f64::INFINITY,
            best_epoch: None,
        }
    }

    /// Records epoch `epoch` (1-based); returns true if it is the new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        if epoch >= self.max_epochs {
            return true;
        }
        if epoch < self.min_epochs {
            return false;
        }
        match self.best_epoch {
            Some(b) => epoch - b >= self.patience,
            None => false,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}
