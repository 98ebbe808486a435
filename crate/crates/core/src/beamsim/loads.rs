//! Synthetic traffic and weather inputs.
//!
//! Traffic is an hourly share-of-daily-traffic curve (percent, summing to
//! 100 over a day) scaled by a base constant and a random per-day factor.
//! Temperature is a yearly plus a diurnal sinusoid with AR(1) noise,
//! rounded to 0.1 deg C like station data.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
}

/// Broad two-peak curve of long-distance traffic.
const HOURLY_A: [f64; 24] = [
    0.6, 0.3, 0.2, 0.2, 0.4, 1.5, 3.5, 6.0, 7.0, 6.0, 5.0, 4.8, 5.0, 5.0, 5.2, 5.8, 6.8, 7.4,
    7.0, 5.6, 4.2, 3.2, 2.2, 1.3,
];
/// Narrow commuter peaks of short-distance traffic.
const HOURLY_B: [f64; 24] = [
    0.5, 0.2, 0.2, 0.2, 0.5, 2.0, 4.0, 8.2, 5.6, 4.0, 3.8, 3.8, 4.0, 4.0, 4.2, 4.6, 5.8, 8.4,
    5.6, 4.5, 3.4, 2.8, 1.8, 1.0,
];

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
        }
    }

    /// Hourly traffic shares in percent, normalized to sum to 100.
    pub fn hourly_factors(self) -> [f64; 24] {
        let raw = match self {
            Scenario::A => HOURLY_A,
            Scenario::B => HOURLY_B,
        };
        let total: f64 = raw.iter().sum();
        raw.map(|v| 100.0 * v / total)
    }

    /// Phase of the yearly temperature sinusoid. A is coldest in mid
    /// January; B stands in for a different year.
    pub fn year_phase(self) -> f64 {
        match self {
            Scenario::A => PI / 2.0 + 2.0 * PI * 15.0 / 365.0,
            Scenario::B => PI / 2.0 + 2.0 * PI * 35.0 / 365.0,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            _ => Err(Error::Invalid(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadConfig {
    /// Multiplies the percent curve to give q in N/m.
    pub base_scale: f64,
    pub daily_sigma: f64,
    pub ar_phi: f64,
    /// Stationary standard deviation of the temperature noise (deg C).
    pub ar_sigma: f64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            base_scale: 36.0,
            daily_sigma: 0.1,
            ar_phi: 0.8,
            ar_sigma: 1.0,
        }
    }
}

/// Noise-free temperature at absolute `day` (fractional) and `hour`.
pub fn seasonal_temperature(day: f64, hour: f64, year_phase: f64) -> f64 {
    10.0 + 10.0 * (2.0 * PI * day / 365.0 - year_phase).sin()
        + 5.0 * (2.0 * PI * hour / 24.0 - PI / 2.0).sin()
}

/// One realization of traffic and temperature, indexed by seconds since
/// the start of the unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub scenario: Scenario,
    pub start_day: f64,
    pub base_scale: f64,
    pub hourly: [f64; 24],
    pub daily: Vec<f64>,
    /// Hourly temperatures, one more than `24 * daily.len()`.
    pub temperature: Vec<f64>,
}

pub fn gen_loads(
    scenario: Scenario,
    seed: u64,
    start_day: f64,
    duration_days: usize,
    cfg: &LoadConfig,
) -> Result<LoadProfile> {
    if !(cfg.ar_phi.abs() < 1.0) || cfg.ar_sigma < 0.0 || cfg.daily_sigma < 0.0 {
        return Err(Error::Invalid("load noise parameters out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let daily_dist = Normal::new(1.0, cfg.daily_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let daily: Vec<f64> = (0..duration_days)
        .map(|_| daily_dist.sample(&mut rng).max(0.0))
        .collect();
    let innovation = Normal::new(0.0, cfg.ar_sigma * (1.0 - cfg.ar_phi * cfg.ar_phi).sqrt())
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let stationary = Normal::new(0.0, cfg.ar_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let hours = 24 * duration_days + 1;
    let mut noise = stationary.sample(&mut rng);
    let phase = scenario.year_phase();
    let mut temperature = Vec::with_capacity(hours);
    for k in 0..hours {
        if k > 0 {
            noise = cfg.ar_phi * noise + innovation.sample(&mut rng);
        }
        let day = start_day + k as f64 / 24.0;
        let t = seasonal_temperature(day, (k % 24) as f64, phase) + noise;
        temperature.push((t * 10.0).round() / 10.0);
    }
    Ok(LoadProfile {
        scenario,
        start_day,
        base_scale: cfg.base_scale,
        hourly: scenario.hourly_factors(),
        daily,
        temperature,
    })
}

impl LoadProfile {
    pub fn duration_s(&self) -> f64 {
        self.daily.len() as f64 * SECONDS_PER_DAY
    }

    /// Distributed load (N/m), held constant within each hour.
    pub fn q(&self, t: f64) -> f64 {
        let hour_index = (t / SECONDS_PER_HOUR).floor().max(0.0) as usize;
        let day = (hour_index / 24).min(self.daily.len().saturating_sub(1));
        self.base_scale * self.hourly[hour_index % 24] * self.daily[day]
    }

    /// Ambient temperature, linear between hourly values.
    pub fn temperature(&self, t: f64) -> f64 {
        let x = (t / SECONDS_PER_HOUR).max(0.0);
        let k = (x.floor() as usize).min(self.temperature.len() - 2);
        let frac = (x - k as f64).min(1.0);
        self.temperature[k] * (1.0 - frac) + self.temperature[k + 1] * frac
    }

    /// Largest over mean hourly load of day `day`.
    pub fn peak_to_mean(&self, day: usize) -> f64 {
        let q: Vec<f64> = (0..24)
            .map(|h| self.q((day * 24 + h) as f64 * SECONDS_PER_HOUR))
            .collect();
        let mean = q.iter().sum::<f64>() / 24.0;
        q.iter().cloned().fold(f64::MIN, f64::max) / mean
    }
}

/// Exponential smoothing of ambient temperature; the through-depth
/// gradient is the lag between the ambient and smoothed values.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSmoother {
    pub factor: f64,
    pub beta_thermal: f64,
    smoothed: Option<f64>,
}

impl ThermalSmoother {
    pub fn new(factor: f64, beta_thermal: f64) -> Self {
        Self {
            factor,
            beta_thermal,
            smoothed: None,
        }
    }

    pub fn smoothed(&self) -> Option<f64> {
        self.smoothed
    }

    /// Starts the filter at `t` with zero gradient.
    pub fn reset(&mut self, t: f64) {
        self.smoothed = Some(t);
    }

    /// Absorbs one ambient sample and returns the current gradient.
    pub fn update(&mut self, ambient: f64) -> f64 {
        let s = match self.smoothed {
            None => ambient,
            Some(s) => s + self.factor * (ambient - s),
        };
        self.smoothed = Some(s);
        self.beta_thermal * (ambient - s)
    }

    pub fn gradient(&self, ambient: f64) -> f64 {
        self.smoothed.map_or(0.0, |s| self.beta_thermal * (ambient - s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_profile() {
        let cfg = LoadConfig::default();
        let a = gen_loads(Scenario::A, 3, 0.0, 20, &cfg).unwrap();
        let b = gen_loads(Scenario::A, 3, 0.0, 20, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_loads(Scenario::A, 4, 0.0, 20, &cfg).unwrap());
    }

    #[test]
    fn scenario_b_has_sharper_peaks_every_day() {
        let cfg = LoadConfig::default();
        let a = gen_loads(Scenario::A, 1, 0.0, 60, &cfg).unwrap();
        let b = gen_loads(Scenario::B, 1, 0.0, 60, &cfg).unwrap();
        for day in 0..60 {
            assert!(b.peak_to_mean(day) > a.peak_to_mean(day));
        }
    }

    #[test]
    fn daily_factor_has_unit_mean() {
        let p = gen_loads(Scenario::A, 11, 0.0, 1000, &LoadConfig::default()).unwrap();
        let mean = p.daily.iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(p.daily.iter().all(|&f| f >= 0.0));
    }

    #[test]
    fn hourly_curves_are_percentages() {
        for s in [Scenario::A, Scenario::B] {
            let total: f64 = s.hourly_factors().iter().sum();
            assert!((total - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn temperature_is_rounded_and_continuous() {
        let p = gen_loads(Scenario::B, 5, 10.0, 3, &LoadConfig::default()).unwrap();
        for &t in &p.temperature {
            assert!(((t * 10.0).round() - t * 10.0).abs() < 1e-9);
        }
        let t = 5.5 * SECONDS_PER_HOUR;
        let mid = 0.5 * (p.temperature[5] + p.temperature[6]);
        assert!((p.temperature(t) - mid).abs() < 1e-12);
    }

    #[test]
    fn seasonal_offset_changes_starting_temperature() {
        let phase = Scenario::A.year_phase();
        let jan = seasonal_temperature(0.0, 0.0, phase);
        let mar = seasonal_temperature(61.0, 0.0, phase);
        let expected = 10.0 * ((2.0 * PI * 61.0 / 365.0 - phase).sin() - (-phase).sin());
        assert!((mar - jan - expected).abs() < 1e-12);
        assert!(mar - jan > 2.0);
    }

    #[test]
    fn smoother_gradient_decays_geometrically() {
        let mut s = ThermalSmoother::new(0.1, 1.0);
        assert_eq!(s.update(20.0), 0.0);
        let g: Vec<f64> = (0..5).map(|_| s.update(30.0)).collect();
        assert!((g[0] - 9.0).abs() < 1e-12);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 0.9).abs() < 1e-12);
        }
        let core = s.smoothed().unwrap();
        assert!((30.0 - core - 10.0 * 0.9f64.powi(5)).abs() < 1e-12);
    }
}
