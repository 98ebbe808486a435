//! Run-to-failure simulation of a degrading simply supported beam under
//! traffic and thermal loading.
//!
//! Each 10-minute main step integrates ten 60 s Newmark substeps, takes
//! the largest mid-span deflection, and then applies one damage increment.
//! With a fundamental period near 0.26 s the 60 s substep cannot resolve
//! vibration, so the response is effectively quasi-static.

mod fem;
mod io;
mod loads;
mod newmark;

pub use fem::{
    assemble_full, assemble_system, distributed_load, natural_frequencies, thermal_axial_force,
    thermal_load, thermal_moment, BeamModel, SystemMatrices, DOF_PER_NODE,
};
pub use io::{read_unit_csv, write_unit_csv, UnitManifest, UNIT_COLUMNS};
pub use loads::{
    gen_loads, seasonal_temperature, LoadConfig, LoadProfile, Scenario, ThermalSmoother,
    SECONDS_PER_DAY, SECONDS_PER_HOUR,
};
pub use newmark::{initial_acceleration, newmark_step, Newmark, NewmarkState};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Displacement-driven damage law `dD = beta (1 - D) ((v - U) / U)^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DamageLaw {
    /// Deflection threshold (m).
    pub u_ref: f64,
    pub beta: f64,
    pub exponent: f64,
    /// End-of-life damage.
    pub failure: f64,
}

impl Default for DamageLaw {
    fn default() -> Self {
        Self {
            u_ref: 0.0125,
            beta: 3.2e-4,
            exponent: 2.0,
            failure: 0.3,
        }
    }
}

/// Largest representable damage; keeps stiffness strictly positive.
const DAMAGE_CAP: f64 = 1.0 - 1e-12;

pub fn update_damage(d: f64, v_max: f64, law: &DamageLaw) -> f64 {
    if v_max <= law.u_ref {
        return d;
    }
    let excess = (v_max - law.u_ref) / law.u_ref;
    (d + law.beta * (1.0 - d) * excess.powf(law.exponent)).min(DAMAGE_CAP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub beam: BeamModel,
    pub damage: DamageLaw,
    pub loads: LoadConfig,
    /// Record spacing (s).
    pub main_step_s: f64,
    pub substeps: usize,
    /// Update factor of the thermal smoothing filter.
    pub smoothing: f64,
    /// Runaway guard on unit length (days).
    pub max_days: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            beam: BeamModel::default(),
            damage: DamageLaw::default(),
            loads: LoadConfig::default(),
            main_step_s: 600.0,
            substeps: 10,
            smoothing: 0.1,
            max_days: 183.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        if !(self.main_step_s > 0.0) || self.substeps == 0 {
            return Err(Error::Invalid("main step and substep count must be positive".into()));
        }
        if !(self.max_days > 0.0) {
            return Err(Error::Invalid("max_days must be positive".into()));
        }
        if !(self.damage.u_ref > 0.0) || self.damage.beta < 0.0 {
            return Err(Error::Invalid("damage law parameters out of range".into()));
        }
        if !(0.0..1.0).contains(&self.damage.failure) {
            return Err(Error::Invalid("failure damage must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::Invalid("smoothing factor must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Sensor nodes nearest L/4, L/3 and L/2.
    pub fn sensor_nodes(&self) -> [usize; 3] {
        let l = self.beam.length;
        [
            self.beam.nearest_node(l / 4.0),
            self.beam.nearest_node(l / 3.0),
            self.beam.nearest_node(l / 2.0),
        ]
    }
}

/// One 10-minute sample of a simulated unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub t_s: f64,
    pub v_quarter: f64,
    pub v_third: f64,
    pub v_mid: f64,
    pub q: f64,
    pub t_ambient: f64,
    pub d_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimUnit {
    pub scenario: Scenario,
    pub seed: u64,
    pub start_day: f64,
    pub records: Vec<SimRecord>,
}

impl SimUnit {
    pub fn final_damage(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.d_true)
    }
}

/// Derives a per-unit seed from a base seed.
pub fn unit_seed(base: u64, scenario: Scenario, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1))
        .wrapping_add(match scenario {
            Scenario::A => 0,
            Scenario::B => 0xB5AD_4ECE_DA1C_E2A9,
        });
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates one unit from the undamaged state until `D >= failure`.
pub fn run_to_failure(cfg: &SimConfig, scenario: Scenario, seed: u64, start_day: f64) -> Result<SimUnit> {
    cfg.validate()?;
    let beam = &cfg.beam;
    let days = cfg.max_days.ceil() as usize + 1;
    let profile = gen_loads(scenario, seed, start_day, days, &cfg.loads)?;

    let sys0 = assemble_system(beam, 0.0)?;
    let unit_q = sys0.restrict(&distributed_load(beam, 1.0));
    // Thermal loads are linear in (dT, gradient) and scale with 1 - D.
    let unit_axial = sys0.restrict(&thermal_load(beam, 0.0, 1.0, 0.0));
    let unit_bend = sys0.restrict(&thermal_load(beam, 0.0, 0.0, 1.0));
    let load = |t: f64, d: f64, gradient: f64| -> DVector<f64> {
        &unit_q * profile.q(t)
            + (&unit_axial * (profile.temperature(t) - beam.t_ref) + &unit_bend * gradient) * (1.0 - d)
    };
    let mut rows = [0usize; 3];
    for (slot, node) in rows.iter_mut().zip(cfg.sensor_nodes()) {
        *slot = sys0
            .row_of(BeamModel::v_dof(node))
            .ok_or_else(|| Error::Invalid(format!("sensor node {node} is constrained")))?;
    }
    let [r_quarter, r_third, r_mid] = rows;

    let dt_sub = cfg.main_step_s / cfg.substeps as f64;
    let integrator_at = |d: f64| {
        let k = &sys0.stiffness * (1.0 - d);
        let c = &sys0.mass * beam.alpha_damp + &k * beam.beta_damp;
        Newmark::new(&sys0.mass, &c, &k, dt_sub)
    };

    let mut smoother = ThermalSmoother::new(cfg.smoothing, beam.beta_thermal);
    smoother.reset(profile.temperature(0.0));
    let mut d = 0.0;
    let f0 = load(0.0, d, 0.0);
    let chol = sys0
        .stiffness
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("constrained stiffness".into()))?;
    let mut state = NewmarkState {
        x: chol.solve(&f0),
        v: DVector::zeros(f0.len()),
        a: DVector::zeros(f0.len()),
    };
    let record = |t: f64, x: &DVector<f64>, d: f64| SimRecord {
        t_s: t,
        v_quarter: x[r_quarter],
        v_third: x[r_third],
        v_mid: x[r_mid],
        q: profile.q(t),
        t_ambient: profile.temperature(t),
        d_true: d,
    };
    let mut records = vec![record(0.0, &state.x, d)];
    let mut integrator = integrator_at(d)?;
    let guard_s = cfg.max_days * SECONDS_PER_DAY;
    let mut n = 0usize;
    while d < cfg.damage.failure {
        let t0 = n as f64 * cfg.main_step_s;
        if t0 >= guard_s {
            return Err(Error::DurationGuard {
                days: cfg.max_days,
                damage: d,
            });
        }
        let gradient = smoother.gradient(profile.temperature(t0));
        let mut v_max = 0.0f64;
        for s in 1..=cfg.substeps {
            let t = t0 + s as f64 * dt_sub;
            state = integrator.step(&state, &load(t, d, gradient));
            let v = state.x[r_mid];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("Newmark substep at t = {t} s")));
            }
            v_max = v_max.max(v.abs());
        }
        n += 1;
        let t1 = n as f64 * cfg.main_step_s;
        smoother.update(profile.temperature(t1));
        let d_next = update_damage(d, v_max, &cfg.damage);
        if d_next != d {
            d = d_next;
            integrator = integrator_at(d)?;
        }
        records.push(record(t1, &state.x, d));
    }
    Ok(SimUnit {
        scenario,
        seed,
        start_day,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn damage_increments_by_hand() {
        let law = DamageLaw::default();
        assert!((update_damage(0.0, 2.0 * law.u_ref, &law) - 3.2e-4).abs() < 1e-18);
        assert!((update_damage(0.5, 1.5 * law.u_ref, &law) - 0.5 - 4.0e-5).abs() < 1e-15);
        assert_eq!(update_damage(0.2, law.u_ref, &law), 0.2);
        assert_eq!(update_damage(0.2, 0.0, &law), 0.2);
        assert!(update_damage(0.999, 1e6, &law) < 1.0);
    }

    #[test]
    fn sensors_sit_at_quarter_third_and_mid_span() {
        assert_eq!(SimConfig::default().sensor_nodes(), [5, 7, 10]);
    }

    #[test]
    fn unit_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for s in [Scenario::A, Scenario::B] {
            for i in 0..6 {
                assert!(seen.insert(unit_seed(7, s, i)));
            }
        }
    }

    #[test]
    fn disabled_damage_hits_the_duration_guard() {
        let cfg = SimConfig {
            damage: DamageLaw {
                beta: 0.0,
                ..DamageLaw::default()
            },
            max_days: 2.0,
            ..SimConfig::default()
        };
        match run_to_failure(&cfg, Scenario::A, 1, 0.0) {
            Err(Error::DurationGuard { damage, .. }) => assert_eq!(damage, 0.0),
            other => panic!("expected duration guard, got {other:?}"),
        }
    }

    #[test]
    fn accelerated_unit_fails_monotonically() {
        let cfg = SimConfig {
            damage: DamageLaw {
                beta: 3.2e-2,
                ..DamageLaw::default()
            },
            max_days: 30.0,
            ..SimConfig::default()
        };
        let unit = run_to_failure(&cfg, Scenario::B, 3, 0.0).unwrap();
        let recs = &unit.records;
        assert!(recs.windows(2).all(|w| w[1].d_true >= w[0].d_true));
        let last = recs[recs.len() - 1].d_true;
        let prev = recs[recs.len() - 2].d_true;
        assert!(last >= 0.3 && prev < 0.3);
        assert!(recs.windows(2).all(|w| (w[1].t_s - w[0].t_s - 600.0).abs() < 1e-9));
        // Deflections are positive downward and grow toward mid-span.
        let r = recs[recs.len() / 2];
        assert!(r.v_mid > r.v_third && r.v_third > r.v_quarter && r.v_quarter > 0.0);
    }
}
