//! Explicit Runge–Kutta integrators operating on tape values.
//!
//! Every stage is recorded on the [`Tape`], so gradients of a solution are
//! exact gradients of the discrete computation. Adaptive steps are
//! truncated to land exactly on the requested output times.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Dopri5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// First adaptive step, or the maximum fixed step for RK4. Defaults to a
    /// tenth of the first output interval.
    #[serde(default)]
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rtol: 1e-3,
            atol: 1e-5,
            initial_step: None,
            max_steps: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4,
            initial_step: Some(step),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Invalid("rtol and atol must be > 0".into()));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Invalid(format!("initial step must be > 0, got {h}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Invalid("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Right-hand side `dz/dt = f(t, z)`.
pub trait VectorField {
    fn eval(&mut self, tape: &mut Tape, t: f64, z: &Var) -> Result<Var>;
}

impl<F> VectorField for F
where
    F: FnMut(&mut Tape, f64, &Var) -> Result<Var>,
{
    fn eval(&mut self, tape: &mut Tape, t: f64, z: &Var) -> Result<Var> {
        self(tape, t, z)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub times: Vec<f64>,
    /// State at each entry of `times`.
    pub states: Vec<Var>,
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
}

impl SolveResult {
    pub fn last(&self) -> &Var {
        self.states.last().expect("at least the initial state")
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Result of a single Dormand–Prince step.
#[derive(Debug, Clone)]
pub struct Dopri5Step {
    pub z_next: Var,
    /// Difference between the 5th- and embedded 4th-order solutions.
    pub error: Tensor,
    /// Derivative at `(t, z)`; still valid if the step is rejected.
    pub k_first: Var,
    /// Derivative at `(t + h, z_next)`, reusable as the next first stage.
    pub k_last: Var,
    pub nfe: usize,
}

fn checked(v: Var, what: &str) -> Result<Var> {
    if v.value().is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// One Dormand–Prince 5(4) step of size `h`. Passing the previous step's
/// `k_last` as `k1` reuses it (six new evaluations instead of seven).
pub fn step_dopri5(
    tape: &mut Tape,
    field: &mut dyn VectorField,
    z: &Var,
    t: f64,
    h: f64,
    k1: Option<Var>,
) -> Result<Dopri5Step> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("step size must be > 0, got {h}")));
    }
    let mut nfe = 0;
    let k1 = match k1 {
        Some(k) => k,
        None => {
            nfe += 1;
            checked(field.eval(tape, t, z)?, "dopri5 stage 1")?
        }
    };
    let mut ks: Vec<Var> = Vec::with_capacity(7);
    ks.push(k1);
    for s in 1..7 {
        let mut terms: Vec<(f64, &Var)> = vec![(1.0, z)];
        for (j, a) in A[s].iter().enumerate() {
            if *a != 0.0 {
                terms.push((h * a, &ks[j]));
            }
        }
        let zs = tape.lincomb(&terms)?;
        let zs = checked(zs, "dopri5 stage state")?;
        if s == 6 {
            // The last stage is evaluated at the 5th-order solution itself.
            let k7 = checked(field.eval(tape, t + h, &zs)?, "dopri5 stage 7")?;
            nfe += 1;
            let mut err = vec![0.0; z.value().numel()];
            for (e, k) in E.iter().zip(ks.iter().chain(std::iter::once(&k7))) {
                if *e == 0.0 {
                    continue;
                }
                for (o, kv) in err.iter_mut().zip(k.data()) {
                    *o += h * e * kv;
                }
            }
            let error = Tensor::new(z.shape().to_vec(), err)?;
            return Ok(Dopri5Step {
                z_next: zs,
                error,
                k_first: ks.swap_remove(0),
                k_last: k7,
                nfe,
            });
        }
        let k = checked(field.eval(tape, t + C[s] * h, &zs)?, "dopri5 stage")?;
        nfe += 1;
        ks.push(k);
    }
    unreachable!("loop returns at the last stage")
}

/// RMS of the error scaled by `atol + rtol * max(|z|, |z_next|)`.
fn error_ratio(err: &Tensor, z: &Tensor, z_next: &Tensor, rtol: f64, atol: f64) -> f64 {
    let n = err.numel().max(1) as f64;
    let sum: f64 = err
        .data()
        .iter()
        .zip(z.data().iter().zip(z_next.data()))
        .map(|(e, (a, b))| {
            let scale = atol + rtol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn rk4_step(tape: &mut Tape, field: &mut dyn VectorField, z: &Var, t: f64, h: f64) -> Result<Var> {
    let k1 = checked(field.eval(tape, t, z)?, "rk4 stage")?;
    let z2 = tape.lincomb(&[(1.0, z), (0.5 * h, &k1)])?;
    let k2 = checked(field.eval(tape, t + 0.5 * h, &z2)?, "rk4 stage")?;
    let z3 = tape.lincomb(&[(1.0, z), (0.5 * h, &k2)])?;
    let k3 = checked(field.eval(tape, t + 0.5 * h, &z3)?, "rk4 stage")?;
    let z4 = tape.lincomb(&[(1.0, z), (h, &k3)])?;
    let k4 = checked(field.eval(tape, t + h, &z4)?, "rk4 stage")?;
    let next = tape.lincomb(&[
        (1.0, z),
        (h / 6.0, &k1),
        (h / 3.0, &k2),
        (h / 3.0, &k3),
        (h / 6.0, &k4),
    ])?;
    checked(next, "rk4 state")
}

/// Integrates `field` from `z0` at `t_grid[0]`, reporting the state at every
/// grid time.
pub fn solve_ivp(
    tape: &mut Tape,
    field: &mut dyn VectorField,
    z0: Var,
    t_grid: &[f64],
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    if t_grid.is_empty() {
        return Err(Error::Invalid("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("time grid must be strictly increasing".into()));
    }
    if !z0.value().is_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    let mut out = SolveResult {
        times: vec![t_grid[0]],
        states: vec![z0.clone()],
        nfe: 0,
        accepted: 0,
        rejected: 0,
    };
    if t_grid.len() == 1 {
        return Ok(out);
    }
    let h_default = cfg.initial_step.unwrap_or((t_grid[1] - t_grid[0]) / 10.0);
    match cfg.method {
        Method::Rk4 => {
            let mut z = z0;
            for w in t_grid.windows(2) {
                let span = w[1] - w[0];
                let n = (span / h_default - 1e-9).ceil().max(1.0) as usize;
                let h = span / n as f64;
                for i in 0..n {
                    if out.accepted >= cfg.max_steps {
                        return Err(Error::MaxSteps(cfg.max_steps));
                    }
                    z = rk4_step(tape, field, &z, w[0] + i as f64 * h, h)?;
                    out.accepted += 1;
                    out.nfe += 4;
                }
                out.times.push(w[1]);
                out.states.push(z.clone());
            }
            Ok(out)
        }
        Method::Dopri5 => {
            let mut z = z0;
            let mut t = t_grid[0];
            let mut h = h_default;
            let mut k1: Option<Var> = None;
            for &target in &t_grid[1..] {
                loop {
                    let remaining = target - t;
                    let landing = h >= remaining * (1.0 - 1e-12);
                    let h_try = if landing { remaining } else { h };
                    if out.accepted + out.rejected >= cfg.max_steps {
                        return Err(Error::MaxSteps(cfg.max_steps));
                    }
                    let step = step_dopri5(tape, field, &z, t, h_try, k1.clone())?;
                    out.nfe += step.nfe;
                    let ratio = error_ratio(&step.error, z.value(), step.z_next.value(), cfg.rtol, cfg.atol);
                    let factor = if ratio == 0.0 {
                        5.0
                    } else {
                        (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    if ratio <= 1.0 {
                        out.accepted += 1;
                        z = step.z_next;
                        k1 = Some(step.k_last);
                        let proposed = h_try * factor;
                        // A truncated landing step says nothing against the
                        // step size that was proposed before truncation.
                        h = if landing { proposed.max(h) } else { proposed };
                        if landing {
                            t = target;
                            break;
                        }
                        t += h_try;
                    } else {
                        out.rejected += 1;
                        k1 = Some(step.k_first);
                        h = h_try * factor;
                    }
                }
                out.times.push(target);
                out.states.push(z.clone());
            }
            Ok(out)
        }
    }
}
