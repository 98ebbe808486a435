//! Hierarchical CDE: a monotone slow degradation CDE conditioning a fast
//! operational CDE.
//!
//! Every window lives on its own pseudo-time axis. Slow knots span [0, 1]
//! and fast knots span [0.9, 1], so both integrations end at the anchor.
//! A batch shares both knot grids, which lets one spline of width
//! `batch * channels` and one solver run serve every sample in it.

use std::rc::Rc;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adamw_step, Activation, BoundMlp, EarlyStopping, Mlp, MlpSpec, OptimizerState,
    PlateauScheduler, Tape, Tensor, TrainingConfig, Var,
};
use crate::datasets::{validation_split, SlowFastSample, WindowConfig};
use crate::error::{shape_err, Error, Result};
use crate::odeint::{solve_ivp, SolveResult, SolverConfig};
use crate::paths::{SplineBasis, TapeSpline};

/// Pseudo-time at which the fast window starts.
pub const FAST_START: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HcdeConfig {
    /// Slow latent dimension.
    pub m_d: usize,
    /// Fast latent dimension.
    pub d_z: usize,
    pub hidden: usize,
    /// Output channels of the path transformation.
    pub path_channels: usize,
    /// Sharpness of the monotonic activation.
    pub gamma: f64,
    pub with_mc: bool,
    pub with_pt: bool,
    /// Removes the fast state from the fast field inputs.
    pub steady_state: bool,
    pub slow_solver: SolverConfig,
    pub fast_solver: SolverConfig,
    pub window: WindowConfig,
}

impl Default for HcdeConfig {
    fn default() -> Self {
        Self {
            m_d: 10,
            d_z: 10,
            hidden: 64,
            path_channels: 10,
            gamma: 10.0,
            with_mc: true,
            with_pt: true,
            steady_state: false,
            slow_solver: SolverConfig::default(),
            fast_solver: SolverConfig::default(),
            window: WindowConfig::default(),
        }
    }
}

impl HcdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_d == 0 || self.d_z == 0 || self.hidden == 0 || self.path_channels == 0 {
            return Err(Error::Invalid("m_d, d_z, hidden and path_channels must be >= 1".into()));
        }
        if !(self.gamma >= 1.0) {
            return Err(Error::Invalid(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        self.window.validate()?;
        if self.window.w_s < 2 || self.window.w_f < 2 {
            return Err(Error::Invalid("w_s and w_f must be >= 2 to build control paths".into()));
        }
        self.slow_solver.validate()?;
        self.fast_solver.validate()
    }

    pub fn slow_activation(&self) -> Activation {
        if self.with_mc {
            Activation::Monotonic { gamma: self.gamma }
        } else {
            Activation::Identity
        }
    }

    pub fn slow_times(&self) -> Vec<f64> {
        let n = self.window.w_s - 1;
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    pub fn fast_times(&self) -> Vec<f64> {
        let n = self.window.w_f - 1;
        (0..=n)
            .map(|j| 1.0 - (1.0 - FAST_START) * (n - j) as f64 / n as f64)
            .collect()
    }
}

/// Most negative value of `sigmoid(gamma x) tanh(x)`, by golden-section
/// search on [-1, 0].
pub fn leak_bound(gamma: f64) -> f64 {
    let f = |x: f64| Activation::Monotonic { gamma }.apply(x);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-1.0f64, 0.0f64);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f(0.5 * (a + b))
}

/// The monotonic slow-rate activation, for callers without a tape.
pub fn monotonic_activation(x: f64, gamma: f64) -> f64 {
    Activation::Monotonic { gamma }.apply(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcdeModel {
    pub config: HcdeConfig,
    pub n_x: usize,
    pub n_u: usize,
    /// `h_psi`, absent when the path transformation is ablated.
    pub path: Option<Mlp>,
    /// `zeta_phi`
    pub slow_encoder: Mlp,
    /// `g_phi`
    pub slow_field: Mlp,
    /// `xi_theta`
    pub fast_encoder: Mlp,
    /// `f_theta`
    pub fast_field: Mlp,
    /// `chi_theta`
    pub readout: Mlp,
}

fn two_layer(input: usize, hidden: usize, output: usize, out_act: Activation) -> MlpSpec {
    MlpSpec::new(vec![input, hidden, output], Activation::Silu, out_act)
}

impl HcdeModel {
    pub fn new(config: HcdeConfig, n_x: usize, n_u: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if n_x == 0 {
            return Err(Error::Invalid("need at least one state channel".into()));
        }
        let c = &config;
        let obs = n_x + n_u + 1;
        let q = if c.with_pt { c.path_channels } else { n_x + n_u };
        let m_fast = n_x + n_u + c.m_d + 1;
        let fast_in = if c.steady_state { c.m_d } else { c.d_z + c.m_d };
        let path = if c.with_pt {
            Some(Mlp::new(&two_layer(obs, c.hidden, q, Activation::Identity), rng)?)
        } else {
            None
        };
        Ok(Self {
            path,
            slow_encoder: Mlp::new(&two_layer(obs, c.hidden, c.m_d, Activation::Identity), rng)?,
            slow_field: Mlp::new(&two_layer(c.m_d, c.hidden, c.m_d * (q + 1), Activation::Tanh), rng)?,
            fast_encoder: Mlp::new(
                &two_layer(n_x + n_u + c.m_d + 1, c.hidden, c.d_z, Activation::Identity),
                rng,
            )?,
            fast_field: Mlp::new(&two_layer(fast_in, c.hidden, c.d_z * m_fast, Activation::Tanh), rng)?,
            readout: Mlp::new(&two_layer(c.d_z, c.hidden, n_x, Activation::Identity), rng)?,
            config,
            n_x,
            n_u,
        })
    }

    /// Channels of the slow control path, excluding time.
    pub fn slow_channels(&self) -> usize {
        if self.config.with_pt {
            self.config.path_channels
        } else {
            self.n_x + self.n_u
        }
    }

    /// Channels of the fast control path, excluding time.
    pub fn fast_channels(&self) -> usize {
        self.n_x + self.n_u + self.config.m_d
    }

    fn mlps(&self) -> Vec<&Mlp> {
        let mut v: Vec<&Mlp> = self.path.iter().collect();
        v.extend([
            &self.slow_encoder,
            &self.slow_field,
            &self.fast_encoder,
            &self.fast_field,
            &self.readout,
        ]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.mlps().iter().map(|m| m.param_count()).sum()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.mlps().into_iter().flat_map(|m| m.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(p) = &mut self.path {
            out.extend(p.parameters_mut());
        }
        out.extend(self.slow_encoder.parameters_mut());
        out.extend(self.slow_field.parameters_mut());
        out.extend(self.fast_encoder.parameters_mut());
        out.extend(self.fast_field.parameters_mut());
        out.extend(self.readout.parameters_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundHcde<'_> {
        BoundHcde {
            model: self,
            path: self.path.as_ref().map(|m| m.bind(tape)),
            slow_encoder: self.slow_encoder.bind(tape),
            slow_field: self.slow_field.bind(tape),
            fast_encoder: self.fast_encoder.bind(tape),
            fast_field: self.fast_field.bind(tape),
            readout: self.readout.bind(tape),
        }
    }
}

/// An [`HcdeModel`] with its parameters on a tape.
pub struct BoundHcde<'a> {
    pub model: &'a HcdeModel,
    path: Option<BoundMlp<'a>>,
    slow_encoder: BoundMlp<'a>,
    slow_field: BoundMlp<'a>,
    fast_encoder: BoundMlp<'a>,
    fast_field: BoundMlp<'a>,
    readout: BoundMlp<'a>,
}

impl BoundHcde<'_> {
    /// Tape variables in the order of [`HcdeModel::parameters`].
    pub fn vars(&self) -> Vec<&Var> {
        let mut v: Vec<&Var> = Vec::new();
        if let Some(p) = &self.path {
            v.extend(p.vars());
        }
        for m in [
            &self.slow_encoder,
            &self.slow_field,
            &self.fast_encoder,
            &self.fast_field,
            &self.readout,
        ] {
            v.extend(m.vars());
        }
        v
    }
}

/// Windows packed for a batched forward pass.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub size: usize,
    /// `[B * w_s, n_x + n_u + 1]`, row `b * w_s + i` is `(x, u, tau_i)`.
    slow_obs: Tensor,
    /// Per fast knot, `[B, n_x + n_u]`.
    fast_obs: Vec<Tensor>,
    /// `[w_f * B, n_x]`, block `j` holds the state one fast step after knot `j`.
    targets: Tensor,
}

impl WindowBatch {
    pub fn new(model: &HcdeModel, samples: &[&SlowFastSample]) -> Result<Self> {
        let (n_x, n_u) = (model.n_x, model.n_u);
        let w = &model.config.window;
        let (w_s, w_f) = (w.w_s, w.w_f);
        let b = samples.len();
        if b == 0 {
            return Err(Error::Invalid("empty batch".into()));
        }
        let tau = model.config.slow_times();
        let mut slow = Vec::with_capacity(b * w_s * (n_x + n_u + 1));
        let mut fast = vec![Vec::with_capacity(b * (n_x + n_u)); w_f];
        let mut targets = vec![0.0; w_f * b * n_x];
        for (bi, s) in samples.iter().enumerate() {
            if s.slow_x.len() != w_s * n_x
                || s.slow_u.len() != w_s * n_u
                || s.fast_x.len() != w_f * n_x
                || s.fast_u.len() != w_f * n_u
                || s.target.len() != n_x
            {
                return Err(shape_err(
                    "WindowBatch",
                    format!("sample {}@{} does not match the model windows", s.unit, s.anchor),
                ));
            }
            for (i, &t) in tau.iter().enumerate() {
                slow.extend_from_slice(&s.slow_x[i * n_x..(i + 1) * n_x]);
                slow.extend_from_slice(&s.slow_u[i * n_u..(i + 1) * n_u]);
                slow.push(t);
            }
            for (j, rows) in fast.iter_mut().enumerate() {
                rows.extend_from_slice(&s.fast_x[j * n_x..(j + 1) * n_x]);
                rows.extend_from_slice(&s.fast_u[j * n_u..(j + 1) * n_u]);
                let next = if j + 1 < w_f {
                    &s.fast_x[(j + 1) * n_x..(j + 2) * n_x]
                } else {
                    &s.target[..]
                };
                let at = (j * b + bi) * n_x;
                targets[at..at + n_x].copy_from_slice(next);
            }
        }
        Ok(Self {
            size: b,
            slow_obs: Tensor::matrix(b * w_s, n_x + n_u + 1, slow)?,
            fast_obs: fast
                .into_iter()
                .map(|rows| Tensor::matrix(b, n_x + n_u, rows))
                .collect::<Result<_>>()?,
            targets: Tensor::matrix(w_f * b, n_x, targets)?,
        })
    }

    fn knot_rows(&self, w_s: usize, knot: usize) -> Vec<usize> {
        (0..self.size).map(|b| b * w_s + knot).collect()
    }
}

/// Linear interpolation between solver checkpoints, clamped to their range.
fn interpolate(tape: &mut Tape, times: &[f64], states: &[Var], t: f64) -> Result<Var> {
    let n = times.len();
    if n == 1 || t <= times[0] {
        return Ok(states[0].clone());
    }
    if t >= times[n - 1] {
        return Ok(states[n - 1].clone());
    }
    let i = times.partition_point(|&k| k <= t).clamp(1, n - 1) - 1;
    let s = (t - times[i]) / (times[i + 1] - times[i]);
    if s == 0.0 {
        return Ok(states[i].clone());
    }
    tape.lincomb(&[(1.0 - s, &states[i]), (s, &states[i + 1])])
}

/// Slow control path `Y`: `h_psi` applied at every slow knot (or the raw
/// observations when ablated), as one spline of width `B * q`.
pub fn transform_path(tape: &mut Tape, bound: &BoundHcde, batch: &WindowBatch) -> Result<TapeSpline> {
    let model = bound.model;
    let w_s = model.config.window.w_s;
    let q = model.slow_channels();
    let obs = Var::constant(batch.slow_obs.clone());
    let (features, width) = match &bound.path {
        Some(h) => (h.forward(tape, &obs)?, q),
        None => (obs, model.n_x + model.n_u + 1),
    };
    let b = batch.size;
    let mut index = Vec::with_capacity(w_s * b * q);
    for i in 0..w_s {
        for bi in 0..b {
            let row = (bi * w_s + i) * width;
            index.extend(row..row + q);
        }
    }
    let knots = tape.gather(&features, Rc::new(index), vec![w_s, b * q])?;
    let basis = Rc::new(SplineBasis::new(&model.config.slow_times())?);
    TapeSpline::fit(tape, basis, knots)
}

/// Integrates `dd/dtau = act(g_phi(d) [Y'(tau), 1])` over the slow knots.
pub fn solve_slow_cde(
    tape: &mut Tape,
    bound: &BoundHcde,
    path: &TapeSpline,
    batch: &WindowBatch,
) -> Result<SolveResult> {
    let model = bound.model;
    let cfg = &model.config;
    let b = batch.size;
    let q = model.slow_channels();
    let first = Var::constant(batch.slow_obs.clone());
    let first = tape.select_rows(&first, &batch.knot_rows(cfg.window.w_s, 0))?;
    let d0 = bound.slow_encoder.forward(tape, &first)?;
    let ones = Var::constant(Tensor::full(&[b, 1], 1.0));
    let act = cfg.slow_activation();
    let mut field = |tape: &mut Tape, tau: f64, d: &Var| -> Result<Var> {
        let dy = path.derivative(tape, tau)?;
        let dy = tape.reshape(&dy, vec![b, q])?;
        let dy = tape.concat_cols(&[&dy, &ones])?;
        let g = bound.slow_field.forward(tape, d)?;
        let rate = tape.row_matvec(&g, &dy)?;
        Ok(tape.activation(&rate, act))
    };
    solve_ivp(tape, &mut field, d0, &cfg.slow_times(), &cfg.slow_solver)
}

/// Integrates `dz/dt = f_theta(z, d(t)) [X_hat'(t), 1]` over the fast knots,
/// where `X_hat` interpolates `(x, u, d)` and `d` is read off the slow
/// checkpoints by linear interpolation.
pub fn solve_fast_cde(tape: &mut Tape, bound: &BoundHcde, batch: &WindowBatch, slow: &SolveResult) -> Result<SolveResult> {
    let model = bound.model;
    let cfg = &model.config;
    let b = batch.size;
    let c = model.fast_channels();
    let fast_times = cfg.fast_times();
    let mut rows = Vec::with_capacity(fast_times.len());
    let mut d_first = None;
    for (j, &t) in fast_times.iter().enumerate() {
        let d = interpolate(tape, &slow.times, &slow.states, t)?;
        let obs = Var::constant(batch.fast_obs[j].clone());
        let row = tape.concat_cols(&[&obs, &d])?;
        rows.push(tape.reshape(&row, vec![1, b * c])?);
        if j == 0 {
            d_first = Some((obs, d));
        }
    }
    let knots = tape.concat_rows(&rows.iter().collect::<Vec<_>>())?;
    let basis = Rc::new(SplineBasis::new(&fast_times)?);
    let path = TapeSpline::fit(tape, basis, knots)?;

    let (obs0, d0) = d_first.expect("w_f >= 2");
    let t0 = Var::constant(Tensor::full(&[b, 1], fast_times[0]));
    let enc_in = tape.concat_cols(&[&obs0, &d0, &t0])?;
    let z0 = bound.fast_encoder.forward(tape, &enc_in)?;
    let ones = Var::constant(Tensor::full(&[b, 1], 1.0));
    let mut field = |tape: &mut Tape, t: f64, z: &Var| -> Result<Var> {
        let dx = path.derivative(tape, t)?;
        let dx = tape.reshape(&dx, vec![b, c])?;
        let dx = tape.concat_cols(&[&dx, &ones])?;
        let d = interpolate(tape, &slow.times, &slow.states, t)?;
        let input = if cfg.steady_state {
            d
        } else {
            tape.concat_cols(&[z, &d])?
        };
        let f = bound.fast_field.forward(tape, &input)?;
        tape.row_matvec(&f, &dx)
    };
    solve_ivp(tape, &mut field, z0, &fast_times, &cfg.fast_solver)
}

/// Batched forward pass.
pub struct Rollout {
    /// Batch mean of the per-window rollout loss.
    pub loss: Var,
    pub slow: SolveResult,
    pub fast: SolveResult,
    /// `[w_f * B, n_x]`, aligned with the batch targets.
    pub predictions: Var,
}

/// Multi-step rollout loss `(1/(M+1)) sum_j |x_j - chi(z_{j-1})|^2`,
/// averaged over the batch.
pub fn rollout(tape: &mut Tape, bound: &BoundHcde, batch: &WindowBatch) -> Result<Rollout> {
    let path = transform_path(tape, bound, batch)?;
    let slow = solve_slow_cde(tape, bound, &path, batch)?;
    let fast = solve_fast_cde(tape, bound, batch, &slow)?;
    let z = tape.concat_rows(&fast.states.iter().collect::<Vec<_>>())?;
    let predictions = bound.readout.forward(tape, &z)?;
    let target = Var::constant(batch.targets.clone());
    let diff = tape.sub(&predictions, &target)?;
    let sq = tape.mul(&diff, &diff)?;
    let total = tape.sum(&sq);
    let windows = (batch.size * fast.states.len()) as f64;
    let loss = tape.scale(&total, 1.0 / windows);
    Ok(Rollout {
        loss,
        slow,
        fast,
        predictions,
    })
}

/// Solver states and predictions of one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentTrajectory {
    pub slow_times: Vec<f64>,
    pub slow: Vec<Vec<f64>>,
    pub fast_times: Vec<f64>,
    pub fast: Vec<Vec<f64>>,
    /// `x_hat(t_j)` for `j = 1..=M+1`.
    pub predictions: Vec<Vec<f64>>,
    pub slow_nfe: usize,
}

/// Loss and latent trajectory of a single window.
pub fn rollout_loss(model: &HcdeModel, sample: &SlowFastSample) -> Result<(f64, LatentTrajectory)> {
    let batch = WindowBatch::new(model, &[sample])?;
    let mut tape = Tape::new(false);
    let bound = model.bind(&mut tape);
    let r = rollout(&mut tape, &bound, &batch)?;
    let loss = r.loss.value().item()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "rollout loss of unit {} anchor {}",
            sample.unit, sample.anchor
        )));
    }
    let rows = |states: &[Var]| states.iter().map(|s| s.data().to_vec()).collect();
    Ok((
        loss,
        LatentTrajectory {
            slow_times: r.slow.times.clone(),
            slow: rows(&r.slow.states),
            fast_times: r.fast.times.clone(),
            fast: rows(&r.fast.states),
            predictions: r
                .predictions
                .data()
                .chunks(model.n_x)
                .map(<[f64]>::to_vec)
                .collect(),
            slow_nfe: r.slow.nfe,
        },
    ))
}

/// Mean loss and mean slow NFE over `samples`, without recording.
pub fn evaluate_loss(model: &HcdeModel, samples: &[&SlowFastSample], batch_size: usize) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut nfe = 0.0;
    let mut batches = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = WindowBatch::new(model, chunk)?;
        let mut tape = Tape::new(false);
        let bound = model.bind(&mut tape);
        let r = rollout(&mut tape, &bound, &batch)?;
        total += r.loss.value().item()? * chunk.len() as f64;
        nfe += r.slow.nfe as f64;
        batches += 1;
    }
    let n = samples.len().max(1) as f64;
    Ok((total / n, nfe / batches.max(1) as f64))
}

/// Batch loss and its gradient for every tensor of `model.parameters()`.
pub fn loss_and_gradients(model: &HcdeModel, samples: &[&SlowFastSample]) -> Result<(f64, Vec<Tensor>)> {
    let batch = WindowBatch::new(model, samples)?;
    let mut tape = Tape::new(true);
    let bound = model.bind(&mut tape);
    let r = rollout(&mut tape, &bound, &batch)?;
    let g = tape.backward(&r.loss)?;
    Ok((r.loss.value().item()?, bound.vars().iter().map(|v| g.wrt(v)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub mean_slow_nfe: f64,
    /// Batches dropped for a non-finite loss or a stiffness event.
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub leak_bound: f64,
}

/// Trains with AdamW and the plateau schedule, keeping the parameters of
/// the best validation epoch.
pub fn train_hcde(
    model: &mut HcdeModel,
    samples: &[SlowFastSample],
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::Invalid(format!("need >= 2 training windows, got {}", samples.len())));
    }
    let leak = leak_bound(model.config.gamma);
    if model.config.with_mc {
        info!("gamma = {}: slow increments leak at most {:.4} per unit step", model.config.gamma, -leak);
    }
    let (mut train_idx, val_idx) = validation_split(samples.len(), cfg.val_fraction, seed);
    let val: Vec<&SlowFastSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_7A1A_u64);
    let mut opt = OptimizerState::new(cfg.optimizer, &model.parameters())?;
    let mut sched = PlateauScheduler::new(cfg.lr_factor, cfg.lr_patience);
    let mut stop = EarlyStopping::new(cfg.min_epochs, cfg.max_epochs, cfg.stop_patience);
    let mut best = model.clone();
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: None,
        best_val_loss: f64::INFINITY,
        leak_bound: leak,
    };
    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut nfe_sum = 0.0;
        let mut steps = 0usize;
        let mut skipped = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let picked: Vec<&SlowFastSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = WindowBatch::new(model, &picked)?;
            let grads = {
                let mut tape = Tape::new(true);
                let bound = model.bind(&mut tape);
                match rollout(&mut tape, &bound, &batch) {
                    Ok(r) => {
                        let loss = r.loss.value().item()?;
                        if loss.is_finite() {
                            let g = tape.backward(&r.loss)?;
                            loss_sum += loss * chunk.len() as f64;
                            seen += chunk.len();
                            nfe_sum += r.slow.nfe as f64;
                            steps += 1;
                            Some(bound.vars().iter().map(|v| g.wrt(v)).collect::<Vec<_>>())
                        } else {
                            None
                        }
                    }
                    Err(e @ (Error::MaxSteps(_) | Error::NonFinite(_))) => {
                        debug!("{e}");
                        None
                    }
                    Err(e) => return Err(e),
                }
            };
            match grads {
                Some(g) if g.iter().all(Tensor::is_finite) => {
                    adamw_step(&mut model.parameters_mut(), &g, &mut opt)?;
                }
                _ => {
                    skipped += 1;
                    let ids: Vec<String> = picked.iter().take(4).map(|s| format!("{}@{}", s.unit, s.anchor)).collect();
                    warn!("epoch {epoch}: skipped batch starting with windows {}", ids.join(", "));
                }
            }
        }
        let train_loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            match evaluate_loss(model, &val, cfg.batch_size) {
                Ok((l, _)) => l,
                Err(Error::MaxSteps(n)) => {
                    warn!("epoch {epoch}: validation hit the {n}-step solver limit");
                    f64::INFINITY
                }
                Err(e) => return Err(e),
            }
        };
        if val_loss.is_nan() {
            return Err(Error::Diverged(format!(
                "validation loss is NaN at epoch {epoch} (train loss {train_loss}, lr {})",
                opt.lr()
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr(),
            mean_slow_nfe: if steps > 0 { nfe_sum / steps as f64 } else { f64::NAN },
            skipped_batches: skipped,
        };
        info!(
            "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {:.2e} slow NFE {:.1}",
            record.lr, record.mean_slow_nfe
        );
        log.epochs.push(record);
        sched.observe(val_loss, &mut opt);
        if stop.observe(epoch, val_loss) {
            best = model.clone();
        }
        if stop.should_stop(epoch) {
            break;
        }
    }
    log.best_epoch = stop.best_epoch();
    log.best_val_loss = stop.best();
    *model = best;
    Ok(log)
}

/// Slow latent states at every slow checkpoint of one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub nfe: usize,
}

pub fn slow_trajectory(model: &HcdeModel, sample: &SlowFastSample) -> Result<SlowTrajectory> {
    let batch = WindowBatch::new(model, &[sample])?;
    let mut tape = Tape::new(false);
    let bound = model.bind(&mut tape);
    let path = transform_path(&mut tape, &bound, &batch)?;
    let r = solve_slow_cde(&mut tape, &bound, &path, &batch)?;
    Ok(SlowTrajectory {
        times: r.times,
        states: r.states.iter().map(|s| s.data().to_vec()).collect(),
        nfe: r.nfe,
    })
}

/// Feature channels of the slow control path at every slow knot.
pub fn transformed_path(model: &HcdeModel, sample: &SlowFastSample) -> Result<Vec<Vec<f64>>> {
    let batch = WindowBatch::new(model, &[sample])?;
    let mut tape = Tape::new(false);
    let bound = model.bind(&mut tape);
    let path = transform_path(&mut tape, &bound, &batch)?;
    model
        .config
        .slow_times()
        .iter()
        .map(|&t| Ok(path.value(&mut tape, t)?.data().to_vec()))
        .collect()
}

/// Degradation embedding of one anchor: the slow state at the anchor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding {
    pub unit: usize,
    pub anchor: usize,
    pub anchor_time: f64,
    pub state: Vec<f64>,
    /// Slow-solve evaluations for this window alone.
    pub nfe: usize,
}

/// Solves each window on its own so that NFE is a per-sample cost.
pub fn infer_degradation(model: &HcdeModel, samples: &[SlowFastSample]) -> Result<Vec<Embedding>> {
    samples
        .iter()
        .map(|s| {
            let traj = slow_trajectory(model, s)?;
            Ok(Embedding {
                unit: s.unit,
                anchor: s.anchor,
                anchor_time: s.anchor_time,
                state: traj.states.last().expect("initial state").clone(),
                nfe: traj.nfe,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odeint::Method;

    fn mini_config() -> HcdeConfig {
        HcdeConfig {
            m_d: 2,
            d_z: 2,
            hidden: 6,
            path_channels: 3,
            slow_solver: SolverConfig::rk4(0.2),
            fast_solver: SolverConfig::rk4(0.025),
            window: WindowConfig {
                w_s: 4,
                dt_s: 2,
                w_f: 3,
                dt_f: 1,
                stride: 1,
                control_lead: false,
            },
            ..HcdeConfig::default()
        }
    }

    fn sample(cfg: &HcdeConfig, n_x: usize, n_u: usize, seed: u64) -> SlowFastSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let w = cfg.window;
        SlowFastSample {
            unit: 0,
            anchor: seed as usize,
            anchor_time: seed as f64,
            slow_x: draw(w.w_s * n_x),
            slow_u: draw(w.w_s * n_u),
            fast_x: draw(w.w_f * n_x),
            fast_u: draw(w.w_f * n_u),
            target: draw(n_x),
        }
    }

    fn zero_last_layer(m: &mut Mlp) {
        let last = m.layers_mut().last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
    }

    #[test]
    fn activation_examples() {
        assert_eq!(monotonic_activation(0.0, 10.0), 0.0);
        assert!((monotonic_activation(1.0, 10.0) - 0.76156).abs() < 1e-5);
        let leak = leak_bound(10.0);
        assert!((leak + 0.0277).abs() < 1e-4, "{leak}");
        assert!((Activation::Monotonic { gamma: 10.0 }.apply(-0.3) - monotonic_activation(-0.3, 10.0)).abs() < 1e-15);
    }

    #[test]
    fn pseudo_time_grids_share_the_terminal_time() {
        let cfg = HcdeConfig::default();
        let s = cfg.slow_times();
        let f = cfg.fast_times();
        assert_eq!((s.len(), f.len()), (100, 11));
        assert_eq!((s[0], *s.last().unwrap()), (0.0, 1.0));
        assert!((f[0] - 0.9).abs() < 1e-15);
        assert_eq!(*f.last().unwrap(), 1.0);
    }

    #[test]
    fn bridge_model_shapes() {
        let m = HcdeModel::new(HcdeConfig::default(), 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.path.as_ref().unwrap().widths(), vec![6, 64, 10]);
        assert_eq!(m.slow_field.widths(), vec![10, 64, 110]);
        assert_eq!(m.fast_encoder.widths(), vec![16, 64, 10]);
        assert_eq!(m.fast_field.widths(), vec![20, 64, 160]);
        assert_eq!(m.readout.widths(), vec![10, 64, 3]);
        assert_eq!(m.parameters().len(), 24);
    }

    #[test]
    fn ablating_the_path_drops_exactly_h_psi_when_widths_agree() {
        // With q equal to the raw channel count the slow field keeps its
        // shape, so only h_psi disappears.
        let cfg = HcdeConfig {
            path_channels: 3,
            ..mini_config()
        };
        let full = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ablated = HcdeModel::new(
            HcdeConfig {
                with_pt: false,
                ..cfg
            },
            2,
            1,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let h = full.path.as_ref().unwrap().param_count();
        assert_eq!(full.param_count() - ablated.param_count(), h);
        assert!(ablated.path.is_none());
    }

    #[test]
    fn zero_path_network_leaves_only_time() {
        let cfg = mini_config();
        let mut m = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        zero_last_layer(m.path.as_mut().unwrap());
        let y = transformed_path(&m, &sample(&cfg, 2, 1, 3)).unwrap();
        assert!(y.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_slow_field_keeps_the_encoding() {
        let cfg = HcdeConfig {
            slow_solver: SolverConfig::default(),
            ..mini_config()
        };
        let mut m = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        zero_last_layer(&mut m.slow_field);
        let s = sample(&cfg, 2, 1, 5);
        let emb = infer_degradation(&m, std::slice::from_ref(&s)).unwrap();
        let first: Vec<f64> = s.slow_x[..2].iter().chain(&s.slow_u[..1]).copied().chain([0.0]).collect();
        let enc = m.slow_encoder.predict(&Tensor::matrix(1, 4, first).unwrap()).unwrap();
        assert_eq!(emb[0].state, enc.data());
        assert!(emb[0].nfe > 0);
    }

    #[test]
    fn zero_fast_field_keeps_z_constant() {
        let cfg = mini_config();
        let mut m = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        zero_last_layer(&mut m.fast_field);
        let (_, traj) = rollout_loss(&m, &sample(&cfg, 2, 1, 7)).unwrap();
        assert!(traj.fast.iter().all(|z| z == &traj.fast[0]));
    }

    #[test]
    fn monotone_increments_respect_the_leak_bound() {
        let cfg = HcdeConfig {
            slow_solver: SolverConfig::rk4(1.0 / 3.0),
            window: WindowConfig {
                w_s: 4,
                dt_s: 1,
                w_f: 2,
                dt_f: 1,
                stride: 1,
                control_lead: false,
            },
            ..mini_config()
        };
        let leak = leak_bound(cfg.gamma);
        for seed in 0..20 {
            let m = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let traj = slow_trajectory(&m, &sample(&cfg, 2, 1, seed + 100)).unwrap();
            // One RK4 step per interval; RK4 is a convex combination of
            // stage rates, each in (leak, 1).
            for (w, dt) in traj.states.windows(2).zip(traj.times.windows(2)) {
                let h = dt[1] - dt[0];
                for (a, b) in w[0].iter().zip(&w[1]) {
                    assert!(b - a >= leak * h - 1e-12 && b - a < h, "{}", b - a);
                }
            }
        }
    }

    #[test]
    fn oracle_readout_gives_zero_loss_and_zero_readout_gives_mean_square() {
        let cfg = mini_config();
        let mut m = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        zero_last_layer(&mut m.readout);
        let s = sample(&cfg, 2, 1, 9);
        let (loss, traj) = rollout_loss(&m, &s).unwrap();
        let targets: Vec<f64> = s.fast_x[2..].iter().chain(&s.target).copied().collect();
        let expected = targets.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((loss - expected).abs() < 1e-12);
        assert_eq!(traj.predictions.len(), 3);

        // Readout bias that reproduces a constant target exactly.
        let mut konst = s.clone();
        konst.fast_x = [0.3, -0.2].repeat(3);
        konst.target = vec![0.3, -0.2];
        m.readout.layers_mut().last_mut().unwrap().bias = Tensor::vector(vec![0.3, -0.2]);
        assert!(rollout_loss(&m, &konst).unwrap().0 < 1e-28);

        // Doubling residuals quadruples the loss.
        let mut doubled = s.clone();
        doubled.fast_x.iter_mut().chain(doubled.target.iter_mut()).for_each(|v| *v *= 2.0);
        zero_last_layer(&mut m.readout);
        let l2 = rollout_loss(&m, &doubled).unwrap().0;
        assert!((l2 - 4.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn batched_loss_is_the_mean_of_single_losses() {
        let cfg = HcdeConfig {
            slow_solver: SolverConfig {
                method: Method::Rk4,
                ..SolverConfig::rk4(0.1)
            },
            ..mini_config()
        };
        let m = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let samples: Vec<SlowFastSample> = (0..5).map(|i| sample(&cfg, 2, 1, 20 + i)).collect();
        let refs: Vec<&SlowFastSample> = samples.iter().collect();
        let (batched, _) = evaluate_loss(&m, &refs, 5).unwrap();
        let single: f64 = samples.iter().map(|s| rollout_loss(&m, s).unwrap().0).sum::<f64>() / 5.0;
        assert!((batched - single).abs() < 1e-12);
    }

    #[test]
    fn short_training_run_reduces_loss_and_restores_best() {
        let cfg = HcdeConfig {
            slow_solver: SolverConfig::rk4(0.34),
            ..mini_config()
        };
        let mut m = HcdeModel::new(cfg.clone(), 2, 1, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let samples: Vec<SlowFastSample> = (0..40).map(|i| sample(&cfg, 2, 1, 50 + i)).collect();
        let tc = TrainingConfig {
            batch_size: 8,
            min_epochs: 1,
            max_epochs: 6,
            ..TrainingConfig::default()
        };
        let log = train_hcde(&mut m, &samples, &tc, 3).unwrap();
        assert!(log.epochs.len() <= 6);
        let first = log.epochs[0].train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let (train, val) = validation_split(40, 0.2, 3);
        assert_eq!((train.len(), val.len()), (32, 8));
        let val: Vec<&SlowFastSample> = val.iter().map(|&i| &samples[i]).collect();
        let (restored, _) = evaluate_loss(&m, &val, 8).unwrap();
        assert!((restored - log.best_val_loss).abs() < 1e-12);
    }
}
