//! Trajectories, unit splits, standardization and two-rate windows.
//!
//! Ground-truth degradation rides along with every [`Unit`] but is private;
//! the only way to read it is [`Unit::truth_for_eval`], which the
//! evaluation stack uses to score embeddings. Windows handed to models
//! ([`SlowFastSample`]) carry states and inputs only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamsim::{write_unit_csv, Scenario, SimUnit, UnitManifest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    IdTest,
    OodTest,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::IdTest => "id-test",
            Split::OodTest => "ood-test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "id-test" => Ok(Split::IdTest),
            "ood-test" => Ok(Split::OodTest),
            _ => Err(Error::Invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// Which table columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleMap {
    pub time: String,
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub truth: Option<String>,
}

impl Default for RoleMap {
    /// Columns of simulated bridge units.
    fn default() -> Self {
        Self {
            time: "t_s".into(),
            states: vec!["v_quarter".into(), "v_third".into(), "v_mid".into()],
            inputs: vec!["q".into(), "T_ambient".into()],
            truth: Some("D_true".into()),
        }
    }
}

/// One trajectory. States and inputs are row-major `len x n` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: String,
    pub scenario: Option<Scenario>,
    pub split: Option<Split>,
    time: Vec<f64>,
    x: Vec<f64>,
    u: Vec<f64>,
    n_x: usize,
    n_u: usize,
    truth: Option<Vec<f64>>,
}

impl Unit {
    pub fn new(
        id: impl Into<String>,
        time: Vec<f64>,
        x: Vec<f64>,
        u: Vec<f64>,
        n_x: usize,
        n_u: usize,
        truth: Option<Vec<f64>>,
    ) -> Result<Self> {
        let len = time.len();
        if x.len() != len * n_x || u.len() != len * n_u || truth.as_ref().is_some_and(|d| d.len() != len) {
            return Err(crate::error::shape_err("Unit::new", "column lengths disagree with time"));
        }
        if time.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("time column is not strictly increasing".into()));
        }
        Ok(Self {
            id: id.into(),
            scenario: None,
            split: None,
            time,
            x,
            u,
            n_x,
            n_u,
            truth,
        })
    }

    pub fn from_sim(id: impl Into<String>, sim: &SimUnit) -> Self {
        let r = &sim.records;
        Self {
            id: id.into(),
            scenario: Some(sim.scenario),
            split: None,
            time: r.iter().map(|r| r.t_s).collect(),
            x: r.iter().flat_map(|r| [r.v_quarter, r.v_third, r.v_mid]).collect(),
            u: r.iter().flat_map(|r| [r.q, r.t_ambient]).collect(),
            n_x: 3,
            n_u: 2,
            truth: Some(r.iter().map(|r| r.d_true).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.n_x..(k + 1) * self.n_x]
    }

    pub fn u(&self, k: usize) -> &[f64] {
        &self.u[k * self.n_u..(k + 1) * self.n_u]
    }

    /// Ground-truth degradation. Reserved for scoring; model code must not
    /// call this.
    pub fn truth_for_eval(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }

    /// First `n` records (the healthy phase used by the residual baseline).
    pub fn head(&self, n: usize) -> Unit {
        let n = n.min(self.len());
        Unit {
            id: self.id.clone(),
            scenario: self.scenario,
            split: self.split,
            time: self.time[..n].to_vec(),
            x: self.x[..n * self.n_x].to_vec(),
            u: self.u[..n * self.n_u].to_vec(),
            n_x: self.n_x,
            n_u: self.n_u,
            truth: self.truth.as_ref().map(|d| d[..n].to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryDataset {
    pub units: Vec<Unit>,
    pub roles: RoleMap,
}

impl TrajectoryDataset {
    pub fn new(units: Vec<Unit>, roles: RoleMap) -> Result<Self> {
        if let Some(first) = units.first() {
            if units.iter().any(|u| u.n_x != first.n_x || u.n_u != first.n_u) {
                return Err(Error::Invalid("units disagree on channel counts".into()));
            }
        }
        Ok(Self { units, roles })
    }

    pub fn n_x(&self) -> usize {
        self.units.first().map_or(0, |u| u.n_x)
    }

    pub fn n_u(&self) -> usize {
        self.units.first().map_or(0, |u| u.n_u)
    }

    pub fn split_units(&self, split: Split) -> impl Iterator<Item = (usize, &Unit)> {
        self.units
            .iter()
            .enumerate()
            .filter(move |(_, u)| u.split == Some(split))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// Scenario A: all but the last unit train, the last is the ID test;
    /// every Scenario B unit is an OOD test.
    #[default]
    Scenario,
    /// Ignores scenarios: the last unit is the test unit.
    UnitHoldout,
}

/// Assigns splits in place, deterministically from unit order.
pub fn split_units(ds: &mut TrajectoryDataset, policy: SplitPolicy) -> Result<()> {
    match policy {
        SplitPolicy::Scenario => {
            if let Some(u) = ds.units.iter().find(|u| u.scenario.is_none()) {
                return Err(Error::Invalid(format!("unit {} has no scenario tag", u.id)));
            }
            let last_a = ds.units.iter().rposition(|u| u.scenario == Some(Scenario::A));
            for (i, u) in ds.units.iter_mut().enumerate() {
                u.split = Some(match u.scenario {
                    Some(Scenario::B) => Split::OodTest,
                    _ if Some(i) == last_a => Split::IdTest,
                    _ => Split::Train,
                });
            }
        }
        SplitPolicy::UnitHoldout => {
            let n = ds.units.len();
            for (i, u) in ds.units.iter_mut().enumerate() {
                u.split = Some(if i + 1 == n { Split::IdTest } else { Split::Train });
            }
        }
    }
    Ok(())
}

/// Per-channel standardization fitted on training units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
}

fn moments(cols: usize, rows: impl Iterator<Item = Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; cols];
    let mut m2 = vec![0.0; cols];
    for row in rows {
        n += 1;
        for c in 0..cols {
            let delta = row[c] - mean[c];
            mean[c] += delta / n as f64;
            m2[c] += delta * (row[c] - mean[c]);
        }
    }
    let std = m2
        .iter()
        .map(|&s| {
            let v = (s / n.max(1) as f64).sqrt();
            if v > 1e-12 {
                v
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Standardizer {
    pub fn fit(units: &[&Unit]) -> Result<Self> {
        let first = units
            .first()
            .ok_or_else(|| Error::Invalid("cannot fit a scaler on zero units".into()))?;
        let (n_x, n_u) = (first.n_x, first.n_u);
        let (x_mean, x_std) = moments(
            n_x,
            units.iter().flat_map(|u| (0..u.len()).map(move |k| u.x(k).to_vec())),
        );
        let (u_mean, u_std) = moments(
            n_u,
            units.iter().flat_map(|u| (0..u.len()).map(move |k| u.u(k).to_vec())),
        );
        Ok(Self {
            x_mean,
            x_std,
            u_mean,
            u_std,
        })
    }

    /// Fits on the training split of `ds`.
    pub fn fit_train(ds: &TrajectoryDataset) -> Result<Self> {
        let train: Vec<&Unit> = ds.split_units(Split::Train).map(|(_, u)| u).collect();
        Self::fit(&train)
    }

    pub fn apply(&self, unit: &Unit) -> Unit {
        let mut out = unit.clone();
        for (k, v) in out.x.iter_mut().enumerate() {
            let c = k % unit.n_x;
            *v = (*v - self.x_mean[c]) / self.x_std[c];
        }
        for (k, v) in out.u.iter_mut().enumerate() {
            let c = k % unit.n_u;
            *v = (*v - self.u_mean[c]) / self.u_std[c];
        }
        out
    }

    pub fn apply_dataset(&self, ds: &TrajectoryDataset) -> TrajectoryDataset {
        TrajectoryDataset {
            units: ds.units.iter().map(|u| self.apply(u)).collect(),
            roles: ds.roles.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub w_s: usize,
    pub dt_s: usize,
    pub w_f: usize,
    pub dt_f: usize,
    pub stride: usize,
    /// Samples the fast-window controls one fast step ahead, so the state
    /// forecast from knot `j - 1` has already seen the input acting at `j`.
    #[serde(default)]
    pub control_lead: bool,
}

impl Default for WindowConfig {
    /// Bridge windows.
    fn default() -> Self {
        Self {
            w_s: 100,
            dt_s: 12,
            w_f: 11,
            dt_f: 1,
            stride: 2,
            control_lead: false,
        }
    }
}

impl WindowConfig {
    /// Windows for steady-state data downsampled to 0.1 Hz.
    pub fn steady_state() -> Self {
        Self {
            w_s: 100,
            dt_s: 20,
            w_f: 5,
            dt_f: 2,
            stride: 5,
            control_lead: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_s == 0 || self.w_f == 0 || self.dt_s == 0 || self.dt_f == 0 || self.stride == 0 {
            return Err(Error::Invalid(format!("window sizes and steps must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Earliest anchor with a full history.
    pub fn first_anchor(&self) -> usize {
        ((self.w_s - 1) * self.dt_s).max((self.w_f - 1) * self.dt_f)
    }

    /// Shortest trajectory yielding one window.
    pub fn min_len(&self) -> usize {
        self.first_anchor() + self.dt_f + 1
    }

    /// Valid anchor indices for a trajectory of `len` records.
    pub fn anchors(&self, len: usize) -> Vec<usize> {
        if len < self.min_len() {
            return Vec::new();
        }
        (self.first_anchor()..=len - 1 - self.dt_f)
            .step_by(self.stride)
            .collect()
    }
}

/// A slow and a fast window ending at the same anchor, plus the next fast
/// state as forecast target. Tables are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowFastSample {
    pub unit: usize,
    pub anchor: usize,
    pub anchor_time: f64,
    pub slow_x: Vec<f64>,
    pub slow_u: Vec<f64>,
    pub fast_x: Vec<f64>,
    pub fast_u: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn sample_multiscale_windows(
    unit_index: usize,
    unit: &Unit,
    cfg: &WindowConfig,
) -> Result<Vec<SlowFastSample>> {
    cfg.validate()?;
    if unit.len() < cfg.min_len() {
        return Err(Error::TooShort {
            len: unit.len(),
            needed: cfg.min_len(),
        });
    }
    Ok(cfg
        .anchors(unit.len())
        .into_iter()
        .map(|t| {
            let slow: Vec<usize> = (0..cfg.w_s).map(|i| t - (cfg.w_s - 1 - i) * cfg.dt_s).collect();
            let fast: Vec<usize> = (0..cfg.w_f).map(|j| t - (cfg.w_f - 1 - j) * cfg.dt_f).collect();
            let lead = if cfg.control_lead { cfg.dt_f } else { 0 };
            let fast_u: Vec<usize> = fast.iter().map(|&k| k + lead).collect();
            let rows = |idx: &[usize], table: &[f64], n: usize| -> Vec<f64> {
                idx.iter().flat_map(|&k| table[k * n..(k + 1) * n].to_vec()).collect()
            };
            SlowFastSample {
                unit: unit_index,
                anchor: t,
                anchor_time: unit.time[t],
                slow_x: rows(&slow, &unit.x, unit.n_x),
                slow_u: rows(&slow, &unit.u, unit.n_u),
                fast_x: rows(&fast, &unit.x, unit.n_x),
                fast_u: rows(&fast_u, &unit.u, unit.n_u),
                target: unit.x(t + cfg.dt_f).to_vec(),
            }
        })
        .collect())
}

/// Windows of every unit in `split`; units too short are skipped with a
/// warning.
pub fn split_windows(ds: &TrajectoryDataset, split: Split, cfg: &WindowConfig) -> Result<Vec<SlowFastSample>> {
    let mut out = Vec::new();
    for (i, unit) in ds.split_units(split) {
        match sample_multiscale_windows(i, unit, cfg) {
            Ok(s) => out.extend(s),
            Err(Error::TooShort { len, needed }) => {
                warn!("skipping unit {}: {len} records, windows need {needed}", unit.id)
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Seeded shuffle of `0..n` into (train, validation) index sets.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Reads a CSV with a header row, picks columns by role and keeps every
/// `downsample`-th row.
pub fn ingest_tabular(path: &Path, roles: &RoleMap, downsample: usize) -> Result<Unit> {
    if downsample == 0 {
        return Err(Error::Invalid("downsample factor must be >= 1".into()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: BTreeMap<String, usize> = r
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let col = |name: &str| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("{}: missing column {name:?}", path.display())))
    };
    let t_col = col(&roles.time)?;
    let x_cols: Vec<usize> = roles.states.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let u_cols: Vec<usize> = roles.inputs.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let d_col = roles.truth.as_deref().map(col).transpose()?;
    let (mut time, mut x, mut u, mut d) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, row) in r.records().enumerate() {
        let row = row?;
        if k % downsample != 0 {
            continue;
        }
        let num = |c: usize| -> Result<f64> {
            let field = row.get(c).unwrap_or("");
            field
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{}: row {k}: bad number {field:?}", path.display())))
        };
        time.push(num(t_col)?);
        for &c in &x_cols {
            x.push(num(c)?);
        }
        for &c in &u_cols {
            u.push(num(c)?);
        }
        if let Some(c) = d_col {
            d.push(num(c)?);
        }
    }
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Unit::new(id, time, x, u, x_cols.len(), u_cols.len(), d_col.map(|_| d))
}

/// Top-level index of a simulated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub units: Vec<UnitManifest>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `<id>.csv` plus `<id>.json` per unit and a dataset manifest.
pub fn write_dataset(dir: &Path, units: &[(UnitManifest, &SimUnit)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (m, sim) in units {
        write_unit_csv(&dir.join(&m.file), &sim.records)?;
        fs::write(dir.join(format!("{}.json", m.unit_id)), serde_json::to_string_pretty(m)? + "\n")?;
    }
    let manifest = DatasetManifest {
        units: units.iter().map(|(m, _)| m.clone()).collect(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Loads a dataset directory, keeping manifest split assignments.
pub fn load_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let roles = RoleMap::default();
    let mut units = Vec::with_capacity(manifest.units.len());
    for m in &manifest.units {
        let mut unit = ingest_tabular(&dir.join(&m.file), &roles, 1)?;
        unit.id = m.unit_id.clone();
        unit.scenario = Some(m.scenario);
        unit.split = m.split.as_deref().map(Split::parse).transpose()?;
        units.push(unit);
    }
    TrajectoryDataset::new(units, roles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamsim::SimRecord;

    fn synthetic_unit(len: usize) -> Unit {
        let time: Vec<f64> = (0..len).map(|k| 600.0 * k as f64).collect();
        let x = (0..len).flat_map(|k| [k as f64, 2.0 * k as f64]).collect();
        let u = (0..len).map(|k| -(k as f64)).collect();
        let d = (0..len).map(|k| k as f64 * 1e-4).collect();
        Unit::new("s", time, x, u, 2, 1, Some(d)).unwrap()
    }

    #[test]
    fn bridge_window_counts() {
        let cfg = WindowConfig::default();
        let a = cfg.anchors(1300);
        assert_eq!(a.len(), 56);
        assert_eq!((a[0], *a.last().unwrap()), (1188, 1298));
        assert_eq!(cfg.anchors(1190), vec![1188]);
        assert!(cfg.anchors(1189).is_empty());
    }

    #[test]
    fn windows_end_at_anchor_and_target_is_next() {
        let unit = synthetic_unit(40);
        let cfg = WindowConfig {
            w_s: 4,
            dt_s: 5,
            w_f: 3,
            dt_f: 2,
            stride: 3,
            control_lead: false,
        };
        let s = sample_multiscale_windows(0, &unit, &cfg).unwrap();
        let first = &s[0];
        assert_eq!(first.anchor, 15);
        assert_eq!(first.slow_x, vec![0.0, 0.0, 5.0, 10.0, 10.0, 20.0, 15.0, 30.0]);
        assert_eq!(first.fast_u, vec![-11.0, -13.0, -15.0]);
        assert_eq!(first.target, vec![17.0, 34.0]);
        assert_eq!(s.last().unwrap().anchor, 36);
    }

    #[test]
    fn control_lead_shifts_only_fast_inputs() {
        let unit = synthetic_unit(40);
        let base = WindowConfig {
            w_s: 4,
            dt_s: 5,
            w_f: 3,
            dt_f: 2,
            stride: 3,
            control_lead: false,
        };
        let led = WindowConfig { control_lead: true, ..base };
        let a = sample_multiscale_windows(0, &unit, &base).unwrap();
        let b = sample_multiscale_windows(0, &unit, &led).unwrap();
        assert_eq!(a.len(), b.len());
        assert_eq!(b[0].fast_u, vec![-13.0, -15.0, -17.0]);
        assert_eq!((&a[0].fast_x, &a[0].slow_u, &a[0].target), (&b[0].fast_x, &b[0].slow_u, &b[0].target));
    }

    #[test]
    fn single_point_windows() {
        let unit = synthetic_unit(3);
        let cfg = WindowConfig {
            w_s: 1,
            dt_s: 1,
            w_f: 1,
            dt_f: 1,
            stride: 1,
            control_lead: false,
        };
        let s = sample_multiscale_windows(0, &unit, &cfg).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].slow_x, vec![0.0, 0.0]);
        assert_eq!(s[0].target, vec![1.0, 2.0]);
    }

    #[test]
    fn too_short_is_an_error() {
        let err = sample_multiscale_windows(0, &synthetic_unit(10), &WindowConfig::default());
        assert!(matches!(err, Err(Error::TooShort { len: 10, needed: 1190 })));
    }

    #[test]
    fn samples_do_not_depend_on_truth() {
        let cfg = WindowConfig {
            w_s: 3,
            dt_s: 2,
            w_f: 2,
            dt_f: 1,
            stride: 1,
            control_lead: false,
        };
        let a = synthetic_unit(20);
        let mut b = a.clone();
        b.truth = Some(vec![42.0; 20]);
        assert_eq!(
            sample_multiscale_windows(0, &a, &cfg).unwrap(),
            sample_multiscale_windows(0, &b, &cfg).unwrap()
        );
    }

    fn tagged(scenarios: &[Scenario]) -> TrajectoryDataset {
        let units = scenarios
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut u = synthetic_unit(5);
                u.id = format!("u{i}");
                u.scenario = Some(s);
                u
            })
            .collect();
        TrajectoryDataset::new(units, RoleMap::default()).unwrap()
    }

    #[test]
    fn bridge_split_is_5_1_6() {
        let mut s = vec![Scenario::A; 6];
        s.extend([Scenario::B; 6]);
        let mut ds = tagged(&s);
        split_units(&mut ds, SplitPolicy::Scenario).unwrap();
        let count = |sp| ds.split_units(sp).count();
        assert_eq!((count(Split::Train), count(Split::IdTest), count(Split::OodTest)), (5, 1, 6));
        assert_eq!(ds.units[5].split, Some(Split::IdTest));
    }

    #[test]
    fn unit_holdout_uses_last_unit() {
        let mut ds = tagged(&[Scenario::B; 3]);
        split_units(&mut ds, SplitPolicy::UnitHoldout).unwrap();
        assert_eq!(ds.units[2].split, Some(Split::IdTest));
        assert_eq!(ds.split_units(Split::Train).count(), 2);
    }

    #[test]
    fn missing_scenario_is_an_error() {
        let mut ds = tagged(&[Scenario::A; 2]);
        ds.units[1].scenario = None;
        assert!(split_units(&mut ds, SplitPolicy::Scenario).is_err());
    }

    #[test]
    fn validation_split_is_deterministic() {
        let (t1, v1) = validation_split(100, 0.2, 5);
        let (t2, v2) = validation_split(100, 0.2, 5);
        assert_eq!((t1.clone(), v1.clone()), (t2, v2));
        assert_eq!(v1.len(), 20);
        let mut all: Vec<usize> = t1.into_iter().chain(v1).collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_ne!(validation_split(100, 0.2, 6).1, validation_split(100, 0.2, 5).1);
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let unit = synthetic_unit(11);
        let sc = Standardizer::fit(&[&unit]).unwrap();
        let z = sc.apply(&unit);
        for c in 0..2 {
            let col: Vec<f64> = (0..11).map(|k| z.x(k)[c]).collect();
            let mean = col.iter().sum::<f64>() / 11.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 11.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        assert_eq!(z.truth_for_eval(), unit.truth_for_eval());
    }

    #[test]
    fn ingest_round_trips_a_bridge_unit() {
        let records: Vec<SimRecord> = (0..7)
            .map(|k| SimRecord {
                t_s: 600.0 * k as f64,
                v_quarter: 0.001 * k as f64,
                v_third: 0.0013 * k as f64,
                v_mid: 0.0015 * k as f64,
                q: 36.0 + k as f64,
                t_ambient: 10.1,
                d_true: 1e-5 * k as f64,
            })
            .collect();
        let sim = SimUnit {
            scenario: Scenario::A,
            seed: 1,
            start_day: 0.0,
            records,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a0.csv");
        write_unit_csv(&p, &sim.records).unwrap();
        let mut back = ingest_tabular(&p, &RoleMap::default(), 1).unwrap();
        back.scenario = Some(Scenario::A);
        assert_eq!(back, Unit::from_sim("a0", &sim));

        let every_other = ingest_tabular(&p, &RoleMap::default(), 2).unwrap();
        assert_eq!(every_other.time(), &[0.0, 1200.0, 2400.0, 3600.0]);
    }

    #[test]
    fn ingest_maps_shuffled_columns_to_roles() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "u1,time,x1\n10,0,1\n20,1,2\n30,2,3\n").unwrap();
        let roles = RoleMap {
            time: "time".into(),
            states: vec!["x1".into()],
            inputs: vec!["u1".into()],
            truth: None,
        };
        let unit = ingest_tabular(&p, &roles, 1).unwrap();
        assert_eq!(unit.x(2), &[3.0]);
        assert_eq!(unit.u(1), &[20.0]);
        assert!(unit.truth_for_eval().is_none());
        let missing = RoleMap {
            time: "t".into(),
            ..roles.clone()
        };
        assert!(ingest_tabular(&p, &missing, 1).is_err());
        fs::write(&p, "u1,time,x1\n10,0,1\n20,0,2\n").unwrap();
        assert!(ingest_tabular(&p, &roles, 1).is_err());
    }
}
