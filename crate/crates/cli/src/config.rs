//! Declarative run configuration.
//!
//! A config file only needs the keys it changes: it is merged onto the
//! serialized defaults, dotted `key.path=value` overrides are applied on
//! top, and the result is parsed once more from TOML text so that unknown
//! keys and bad values are reported with their location.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hcde_core::autodiff::TrainingConfig;
use hcde_core::baseline::ResidualConfig;
use hcde_core::beamsim::SimConfig;
use hcde_core::datasets::SplitPolicy;
use hcde_core::hcde::HcdeConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Model seeds; every training command runs each of them.
    pub seeds: Vec<u64>,
    pub simulate: SimulateConfig,
    pub hcde: HcdeConfig,
    pub hcde_training: TrainingConfig,
    pub residual: ResidualConfig,
    pub ablate: AblateConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            simulate: SimulateConfig::default(),
            hcde: HcdeConfig::default(),
            hcde_training: TrainingConfig::default(),
            residual: ResidualConfig::default(),
            ablate: AblateConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Base seed the per-unit seeds derive from.
    pub seed: u64,
    pub units_a: usize,
    pub units_b: usize,
    /// Unit `i` of a scenario starts `i * offset_days` into the year.
    pub offset_days: f64,
    pub split: SplitPolicy,
    pub sim: SimConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            units_a: 6,
            units_b: 6,
            offset_days: 61.0,
            split: SplitPolicy::Scenario,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoMc,
    NoPt,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMc => "no-mc",
            Variant::NoPt => "no-pt",
        }
    }

    pub fn apply(self, base: &HcdeConfig) -> HcdeConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoMc => cfg.with_mc = false,
            Variant::NoPt => cfg.with_pt = false,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    /// Also trains and scores the residual baseline on every seed.
    pub residual: bool,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Full, Variant::NoMc, Variant::NoPt],
            residual: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub dt_s: Vec<usize>,
    pub w_s: usize,
    pub dt_f: usize,
    /// Overrides `hcde_training.max_epochs` for the sweep only.
    pub max_epochs: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dt_s: vec![1, 3, 6, 12],
            w_s: 100,
            dt_f: 1,
            max_epochs: None,
        }
    }
}

impl RunConfig {
    /// Defaults, then `path` if given, then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = Table::try_from(Self::default()).context("serializing defaults")?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let text = table.to_string();
        let cfg: Self = toml::from_str(&text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            bail!("seeds: duplicate seed in {:?}", self.seeds);
        }
        if self.simulate.units_a + self.simulate.units_b == 0 {
            bail!("simulate: no units requested");
        }
        if self.sweep.dt_s.is_empty() {
            bail!("sweep.dt_s: empty");
        }
        self.simulate.sim.validate().context("simulate.sim")?;
        self.hcde.validate().context("hcde")?;
        self.hcde_training.validate().context("hcde_training")?;
        self.residual.validate().context("residual")?;
        Ok(())
    }

    /// TOML text of the fully resolved configuration.
    pub fn snapshot(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(SNAPSHOT_FILE), self.snapshot()?)?;
        Ok(())
    }
}

/// Recursively overlays `src` onto `dst`. Tables merge, everything else
/// replaces. Unknown keys are kept so the final parse can reject them.
fn merge(dst: &mut Table, src: Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML value,
/// falling back to a bare string (so `split=unit-holdout` works unquoted).
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not of the form key.path=value");
    };
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty key segment");
    }
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!("override {spec:?}: {p} is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
