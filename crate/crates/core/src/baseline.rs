//! Residual baseline: a feedforward model of healthy behavior whose
//! prediction errors on later data act as the degradation embedding.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adamw_step, Activation, EarlyStopping, Mlp, MlpSpec, OptimizerState, PlateauScheduler, Tape,
    Tensor, TrainingConfig, Var,
};
use crate::datasets::{validation_split, Unit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualConfig {
    /// History length: `w - 1` past states and `w` inputs. `w = 1` maps the
    /// current input alone to the current state.
    pub window: usize,
    /// Leading records of each training unit treated as healthy.
    pub healthy_len: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_norm: bool,
    pub training: TrainingConfig,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            window: 5,
            healthy_len: 1000,
            hidden: vec![50, 50, 20, 10],
            dropout: 0.2,
            batch_norm: true,
            training: TrainingConfig::default(),
        }
    }
}

impl ResidualConfig {
    pub fn input_width(&self, n_x: usize, n_u: usize) -> usize {
        (self.window - 1) * n_x + self.window * n_u
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Invalid("residual window must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        self.training.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub config: ResidualConfig,
    pub n_x: usize,
    pub n_u: usize,
    pub net: Mlp,
}

/// Flattened `(x_{k-w+1..k-1}, u_{k-w+1..k})` for record `k >= w - 1`.
pub fn residual_input(unit: &Unit, k: usize, window: usize) -> Vec<f64> {
    let start = k + 1 - window;
    let mut v = Vec::with_capacity((window - 1) * unit.n_x() + window * unit.n_u());
    for j in start..k {
        v.extend_from_slice(unit.x(j));
    }
    for j in start..=k {
        v.extend_from_slice(unit.u(j));
    }
    v
}

/// Row-major input and target vectors.
pub type Pairs = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Input/target pairs from the healthy head of every unit.
pub fn healthy_pairs(units: &[&Unit], cfg: &ResidualConfig) -> Result<Pairs> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for u in units {
        if u.len() < cfg.healthy_len {
            return Err(Error::TooShort {
                len: u.len(),
                needed: cfg.healthy_len,
            });
        }
        let healthy = u.head(cfg.healthy_len);
        for k in cfg.window - 1..healthy.len() {
            inputs.push(residual_input(&healthy, k, cfg.window));
            targets.push(healthy.x(k).to_vec());
        }
    }
    if inputs.len() < 2 {
        return Err(Error::Invalid(format!(
            "healthy segment of {} records yields fewer than 2 windows",
            cfg.healthy_len
        )));
    }
    Ok((inputs, targets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

fn stack(rows: &[&Vec<f64>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, |r| r.len());
    Tensor::matrix(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
}

fn mse(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.rows().max(1) as f64;
    pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n
}

/// Fits the healthy-behavior model on the first `healthy_len` records of
/// each training unit; nothing later is read.
pub fn train_residual(units: &[&Unit], cfg: &ResidualConfig, seed: u64) -> Result<(ResidualModel, Vec<ResidualEpoch>)> {
    cfg.validate()?;
    let first = units.first().ok_or_else(|| Error::Invalid("no training units".into()))?;
    let (n_x, n_u) = (first.n_x(), first.n_u());
    let (inputs, targets) = healthy_pairs(units, cfg)?;
    let mut widths = vec![cfg.input_width(n_x, n_u)];
    widths.extend(&cfg.hidden);
    widths.push(n_x);
    let spec = MlpSpec {
        batch_norm: cfg.batch_norm,
        dropout: cfg.dropout,
        ..MlpSpec::new(widths, Activation::Silu, Activation::Identity)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(&spec, &mut rng)?;
    let tc = &cfg.training;
    let (mut train_idx, val_idx) = validation_split(inputs.len(), tc.val_fraction, seed);
    let val_x = stack(&val_idx.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
    let val_y = stack(&val_idx.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
    let mut opt = OptimizerState::new(tc.optimizer, &net.parameters())?;
    let mut sched = PlateauScheduler::new(tc.lr_factor, tc.lr_patience);
    let mut stop = EarlyStopping::new(tc.min_epochs, tc.max_epochs, tc.stop_patience);
    let mut best = net.clone();
    let mut log = Vec::new();
    for epoch in 1..=tc.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(tc.batch_size) {
            // Batch statistics need at least two rows.
            if chunk.len() < 2 && cfg.batch_norm {
                continue;
            }
            let x = stack(&chunk.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
            let y = stack(&chunk.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
            let (grads, stats) = {
                let mut tape = Tape::new(true);
                let bound = net.bind(&mut tape);
                let (pred, stats) = bound.forward_train(&mut tape, &Var::constant(x), &mut rng)?;
                let diff = tape.sub(&pred, &Var::constant(y))?;
                let sq = tape.mul(&diff, &diff)?;
                let sum = tape.sum(&sq);
                let loss = tape.scale(&sum, 1.0 / chunk.len() as f64);
                total += loss.value().item()? * chunk.len() as f64;
                let g = tape.backward(&loss)?;
                (bound.vars().iter().map(|v| g.wrt(v)).collect::<Vec<_>>(), stats)
            };
            adamw_step(&mut net.parameters_mut(), &grads, &mut opt)?;
            net.update_running_stats(&stats);
        }
        let train_loss = total / train_idx.len() as f64;
        let val_loss = if val_idx.is_empty() {
            train_loss
        } else {
            mse(&net.predict(&val_x)?, &val_y)
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("residual model validation loss {val_loss} at epoch {epoch}")));
        }
        info!("residual epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        log.push(ResidualEpoch {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr(),
        });
        sched.observe(val_loss, &mut opt);
        if stop.observe(epoch, val_loss) {
            best = net.clone();
        }
        if stop.should_stop(epoch) {
            break;
        }
    }
    Ok((
        ResidualModel {
            config: cfg.clone(),
            n_x,
            n_u,
            net: best,
        },
        log,
    ))
}

/// Residual `r_k = x_k - x_hat_k` at one record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualPoint {
    pub k: usize,
    pub t: f64,
    pub residual: Vec<f64>,
}

/// Residuals at records `ks` (each `>= w - 1`), in inference mode.
pub fn residual_at(model: &ResidualModel, unit: &Unit, ks: &[usize]) -> Result<Vec<ResidualPoint>> {
    let w = model.config.window;
    if let Some(&k) = ks.iter().find(|&&k| k + 1 < w || k >= unit.len()) {
        return Err(Error::Invalid(format!("record {k} has no full residual window")));
    }
    let mut out = Vec::with_capacity(ks.len());
    for chunk in ks.chunks(4096) {
        let rows: Vec<Vec<f64>> = chunk.iter().map(|&k| residual_input(unit, k, w)).collect();
        let pred = model.net.predict(&stack(&rows.iter().collect::<Vec<_>>())?)?;
        for (i, &k) in chunk.iter().enumerate() {
            let residual = unit.x(k).iter().zip(pred.row(i)).map(|(x, p)| x - p).collect();
            out.push(ResidualPoint {
                k,
                t: unit.time()[k],
                residual,
            });
        }
    }
    Ok(out)
}

/// Residuals over the whole trajectory.
pub fn residual_infer(model: &ResidualModel, unit: &Unit) -> Result<Vec<ResidualPoint>> {
    let ks: Vec<usize> = (model.config.window - 1..unit.len()).collect();
    residual_at(model, unit, &ks)
}
