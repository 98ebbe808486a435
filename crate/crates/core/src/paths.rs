//! Natural cubic spline control paths.
//!
//! A natural cubic spline is linear in its knot values: the second
//! derivatives solve a tridiagonal system whose right-hand side is a fixed
//! linear map of the values. [`SplinePath`] evaluates plain data, while
//! [`SplineBasis`] precomputes that linear map once per knot grid so that
//! [`TapeSpline`] can carry gradients into learned knot values.

use std::rc::Rc;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Invalid(format!(
            "a spline needs at least 2 knots, got {}",
            times.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("knot time".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid(
            "knot times must be strictly increasing (duplicate or unsorted time)".into(),
        ));
    }
    Ok(())
}

/// Second derivatives of the natural spline through `(times, y)`.
fn natural_second_derivatives(times: &[f64], y: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior unknowns M_1..M_{n-2}.
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 1..n - 1 {
        let h0 = times[i] - times[i - 1];
        let h1 = times[i + 1] - times[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for j in 1..k {
        let lower = times[j + 1] - times[j];
        let w = lower / diag[j - 1];
        diag[j] -= w * upper[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for j in (0..k - 1).rev() {
        m[j + 1] = (rhs[j] - upper[j] * m[j + 2]) / diag[j];
    }
    m
}

/// Segment index, local coordinate in [0, 1], width, and whether `t` was
/// clamped onto the knot range.
fn locate(times: &[f64], t: f64) -> (usize, f64, f64, bool) {
    let n = times.len();
    let (tc, clamped) = if t < times[0] {
        (times[0], true)
    } else if t > times[n - 1] {
        (times[n - 1], true)
    } else {
        (t, false)
    };
    let i = times.partition_point(|&k| k <= tc).clamp(1, n - 1) - 1;
    let h = times[i + 1] - times[i];
    (i, (tc - times[i]) / h, h, clamped)
}

/// Value and derivative of a path at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub value: Vec<f64>,
    pub derivative: Vec<f64>,
    /// `t` fell outside the knot range; the value was clamped and the
    /// derivative of data channels set to zero.
    pub extrapolated: bool,
}

/// A fitted multi-channel natural cubic spline.
#[derive(Debug, Clone, PartialEq)]
pub struct SplinePath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    time_channel: bool,
}

/// Fits one spline per channel. `values[c][i]` is channel `c` at `times[i]`.
pub fn fit_natural_cubic(times: &[f64], values: &[Vec<f64>]) -> Result<SplinePath> {
    check_times(times)?;
    for (c, ch) in values.iter().enumerate() {
        if ch.len() != times.len() {
            return Err(crate::error::shape_err(
                "fit_natural_cubic",
                format!("channel {c} has {} values for {} knots", ch.len(), times.len()),
            ));
        }
    }
    Ok(SplinePath {
        times: times.to_vec(),
        second: values
            .iter()
            .map(|y| natural_second_derivatives(times, y))
            .collect(),
        values: values.to_vec(),
        time_channel: false,
    })
}

impl SplinePath {
    /// Appends time itself as a final channel, with derivative exactly 1.
    pub fn with_time_channel(mut self) -> Self {
        self.time_channel = true;
        self
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.times
    }

    pub fn channels(&self) -> usize {
        self.values.len() + usize::from(self.time_channel)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    pub fn eval(&self, t: f64) -> PathPoint {
        let (i, s, h, clamped) = locate(&self.times, t);
        let mut value = Vec::with_capacity(self.channels());
        let mut derivative = Vec::with_capacity(self.channels());
        let u = 1.0 - s;
        for (y, m) in self.values.iter().zip(&self.second) {
            let v = u * y[i]
                + s * y[i + 1]
                + h * h / 6.0 * ((u * u * u - u) * m[i] + (s * s * s - s) * m[i + 1]);
            let d = (y[i + 1] - y[i]) / h
                + h / 6.0 * (-(3.0 * u * u - 1.0) * m[i] + (3.0 * s * s - 1.0) * m[i + 1]);
            value.push(v);
            derivative.push(if clamped { 0.0 } else { d });
        }
        if self.time_channel {
            value.push(t);
            derivative.push(1.0);
        }
        PathPoint {
            value,
            derivative,
            extrapolated: clamped,
        }
    }

    /// Second derivative of every data channel.
    pub fn second_derivative(&self, t: f64) -> Vec<f64> {
        let (i, s, _, _) = locate(&self.times, t);
        self.second
            .iter()
            .map(|m| (1.0 - s) * m[i] + s * m[i + 1])
            .collect()
    }
}

/// Linear map from knot values to natural-spline second derivatives for a
/// fixed knot grid.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    times: Vec<f64>,
    /// `[n, n]`: `M = phi * y`.
    phi: Tensor,
}

impl SplineBasis {
    pub fn new(times: &[f64]) -> Result<Self> {
        check_times(times)?;
        let n = times.len();
        let mut phi = vec![0.0; n * n];
        let mut unit = vec![0.0; n];
        for k in 0..n {
            unit[k] = 1.0;
            let col = natural_second_derivatives(times, &unit);
            unit[k] = 0.0;
            for (r, v) in col.into_iter().enumerate() {
                phi[r * n + k] = v;
            }
        }
        Ok(Self {
            times: times.to_vec(),
            phi: Tensor::matrix(n, n, phi)?,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }
}

/// Spline whose knot values are tape variables. Knots are stored as an
/// `[n_knots, width]` matrix, so a whole batch of paths sharing one knot grid
/// is a single spline of width `batch * channels`.
#[derive(Debug, Clone)]
pub struct TapeSpline {
    basis: Rc<SplineBasis>,
    knots: Var,
    second: Var,
}

impl TapeSpline {
    pub fn fit(tape: &mut Tape, basis: Rc<SplineBasis>, knots: Var) -> Result<Self> {
        if knots.shape().len() != 2 || knots.shape()[0] != basis.len() {
            return Err(crate::error::shape_err(
                "TapeSpline::fit",
                format!("knots {:?} for {} times", knots.shape(), basis.len()),
            ));
        }
        let phi = Var::constant(basis.phi.clone());
        let second = tape.matmul(&phi, &knots)?;
        Ok(Self {
            basis,
            knots,
            second,
        })
    }

    pub fn width(&self) -> usize {
        self.knots.shape()[1]
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    fn rows(&self, tape: &mut Tape, i: usize) -> Result<[Var; 4]> {
        Ok([
            tape.select_rows(&self.knots, &[i])?,
            tape.select_rows(&self.knots, &[i + 1])?,
            tape.select_rows(&self.second, &[i])?,
            tape.select_rows(&self.second, &[i + 1])?,
        ])
    }

    /// `[1, width]` value at `t` (clamped to the knot range).
    pub fn value(&self, tape: &mut Tape, t: f64) -> Result<Var> {
        let (i, s, h, _) = locate(&self.basis.times, t);
        let u = 1.0 - s;
        let [y0, y1, m0, m1] = self.rows(tape, i)?;
        tape.lincomb(&[
            (u, &y0),
            (s, &y1),
            (h * h / 6.0 * (u * u * u - u), &m0),
            (h * h / 6.0 * (s * s * s - s), &m1),
        ])
    }

    /// `[1, width]` derivative at `t`; zero outside the knot range.
    pub fn derivative(&self, tape: &mut Tape, t: f64) -> Result<Var> {
        let (i, s, h, clamped) = locate(&self.basis.times, t);
        let [y0, y1, m0, m1] = self.rows(tape, i)?;
        if clamped {
            return Ok(tape.scale(&y0, 0.0));
        }
        let u = 1.0 - s;
        tape.lincomb(&[
            (-1.0 / h, &y0),
            (1.0 / h, &y1),
            (-h / 6.0 * (3.0 * u * u - 1.0), &m0),
            (h / 6.0 * (3.0 * s * s - 1.0), &m1),
        ])
    }
}
