//! Newmark-beta integration of `M a + C v + K x = f`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Average-acceleration parameters.
pub const BETA: f64 = 0.25;
pub const GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct NewmarkState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
}

impl NewmarkState {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            v: DVector::zeros(n),
            a: DVector::zeros(n),
        }
    }
}

/// Integrator with the effective stiffness factored once.
#[derive(Debug, Clone)]
pub struct Newmark {
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    dt: f64,
    effective: Cholesky<f64, Dyn>,
}

impl Newmark {
    pub fn new(m: &DMatrix<f64>, c: &DMatrix<f64>, k: &DMatrix<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("Newmark step must be positive, got {dt}")));
        }
        let (a0, a1) = (1.0 / (BETA * dt * dt), GAMMA / (BETA * dt));
        let k_eff = k + m * a0 + c * a1;
        let effective = k_eff.cholesky().ok_or_else(|| {
            Error::Singular("effective Newmark stiffness is not positive definite".into())
        })?;
        Ok(Self {
            mass: m.clone(),
            damping: c.clone(),
            dt,
            effective,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step to a state in equilibrium with `f_next`.
    pub fn step(&self, s: &NewmarkState, f_next: &DVector<f64>) -> NewmarkState {
        let dt = self.dt;
        let a0 = 1.0 / (BETA * dt * dt);
        let a1 = GAMMA / (BETA * dt);
        let a2 = 1.0 / (BETA * dt);
        let a3 = 1.0 / (2.0 * BETA) - 1.0;
        let a4 = GAMMA / BETA - 1.0;
        let a5 = dt / 2.0 * (GAMMA / BETA - 2.0);
        let rhs = f_next
            + &self.mass * (&s.x * a0 + &s.v * a2 + &s.a * a3)
            + &self.damping * (&s.x * a1 + &s.v * a4 + &s.a * a5);
        let x = self.effective.solve(&rhs);
        let a = (&x - &s.x) * a0 - &s.v * a2 - &s.a * a3;
        let v = &s.v + (&s.a * (1.0 - GAMMA) + &a * GAMMA) * dt;
        NewmarkState { x, v, a }
    }
}

/// Acceleration consistent with `(x, v)` under load `f`.
pub fn initial_acceleration(
    m: &DMatrix<f64>,
    c: &DMatrix<f64>,
    k: &DMatrix<f64>,
    x: &DVector<f64>,
    v: &DVector<f64>,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&(f - c * v - k * x)))
}

/// One-off step; factors the effective stiffness on every call.
pub fn newmark_step(
    m: &DMatrix<f64>,
    c: &DMatrix<f64>,
    k: &DMatrix<f64>,
    state: &NewmarkState,
    f_next: &DVector<f64>,
    dt: f64,
) -> Result<NewmarkState> {
    Ok(Newmark::new(m, c, k, dt)?.step(state, f_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sdof(m: f64, c: f64, k: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_element(1, 1, m),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, k),
        )
    }

    #[test]
    fn undamped_oscillator_keeps_its_amplitude() {
        let w = 2.0 * std::f64::consts::PI;
        let (m, c, k) = sdof(1.0, 0.0, w * w);
        let nm = Newmark::new(&m, &c, &k, 0.01).unwrap();
        let f = DVector::zeros(1);
        let mut s = NewmarkState::zeros(1);
        s.x[0] = 1.0;
        s.a = initial_acceleration(&m, &c, &k, &s.x, &s.v, &f).unwrap();
        let mut peak_last = 0.0f64;
        for n in 0..1000 {
            s = nm.step(&s, &f);
            if n >= 900 {
                peak_last = peak_last.max(s.x[0].abs());
            }
        }
        assert!((peak_last - 1.0).abs() < 1e-3, "{peak_last}");
        let energy = 0.5 * s.v[0] * s.v[0] + 0.5 * w * w * s.x[0] * s.x[0];
        assert!((energy - 0.5 * w * w).abs() / (0.5 * w * w) < 1e-10);
    }

    #[test]
    fn damped_system_settles_at_static_solution() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let k = DMatrix::from_row_slice(2, 2, &[30.0, -10.0, -10.0, 20.0]);
        let c = &m * 0.5 + &k * 0.05;
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let nm = Newmark::new(&m, &c, &k, 0.05).unwrap();
        let mut s = NewmarkState::zeros(2);
        for _ in 0..20_000 {
            s = nm.step(&s, &f);
        }
        let exact = k.clone().cholesky().unwrap().solve(&f);
        assert!((&s.x - &exact).norm() / exact.norm() < 1e-8);
    }

    #[test]
    fn zero_load_from_rest_stays_at_rest() {
        let (m, c, k) = sdof(1.0, 0.1, 4.0);
        let mut s = NewmarkState::zeros(1);
        for _ in 0..100 {
            s = newmark_step(&m, &c, &k, &s, &DVector::zeros(1), 60.0).unwrap();
        }
        assert_eq!(s, NewmarkState::zeros(1));
    }

    #[test]
    fn indefinite_system_fails_to_factor() {
        let (m, c, k) = sdof(1.0, 0.0, -1e6);
        assert!(Newmark::new(&m, &c, &k, 1.0).is_err());
    }
}
