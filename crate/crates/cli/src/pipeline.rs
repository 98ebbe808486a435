//! Data preparation, training and scoring steps shared by the commands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hcde_core::autodiff::TrainingConfig;
use hcde_core::baseline::{residual_at, train_residual, ResidualConfig, ResidualEpoch, ResidualModel};
use hcde_core::datasets::{load_dataset, split_windows, Split, Standardizer, TrajectoryDataset, Unit, WindowConfig};
use hcde_core::eval::{score_split, EmbeddingRow, Pca, SplitScore};
use hcde_core::hcde::{infer_degradation, train_hcde, HcdeConfig, HcdeModel, TrainingLog};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Test splits in report order.
pub const TEST_SPLITS: [Split; 2] = [Split::IdTest, Split::OodTest];

/// A standardized dataset and the scaler fitted on its training units.
pub struct Prepared {
    pub data: TrajectoryDataset,
    pub standardizer: Standardizer,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let raw = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        if raw.units.iter().any(|u| u.split.is_none()) {
            bail!("{}: every unit needs a split assignment", dir.display());
        }
        let standardizer = Standardizer::fit_train(&raw)?;
        Ok(Self {
            data: standardizer.apply_dataset(&raw),
            standardizer,
        })
    }

    /// Applies a scaler fitted elsewhere, for scoring saved models.
    pub fn load_with(dir: &Path, standardizer: &Standardizer) -> Result<Self> {
        let raw = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        Ok(Self {
            data: standardizer.apply_dataset(&raw),
            standardizer: standardizer.clone(),
        })
    }

    /// Test splits that have at least one unit.
    pub fn test_splits(&self) -> Vec<Split> {
        TEST_SPLITS
            .into_iter()
            .filter(|&s| self.data.split_units(s).next().is_some())
            .collect()
    }

    pub fn train_units(&self) -> Vec<&Unit> {
        self.data.split_units(Split::Train).map(|(_, u)| u).collect()
    }
}

/// A trained model with everything needed to apply it to raw data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Artifact {
    Hcde { standardizer: Standardizer, model: HcdeModel },
    Residual { standardizer: Standardizer, model: ResidualModel },
}

pub const ARTIFACT_FORMAT: &str = "hcde-lab-artifact";

impl Artifact {
    pub fn method(&self) -> &'static str {
        match self {
            Artifact::Hcde { .. } => "hcde",
            Artifact::Residual { .. } => "residual",
        }
    }

    pub fn standardizer(&self) -> &Standardizer {
        match self {
            Artifact::Hcde { standardizer, .. } | Artifact::Residual { standardizer, .. } => standardizer,
        }
    }
}

pub fn fit_hcde(
    prep: &Prepared,
    cfg: &HcdeConfig,
    training: &TrainingConfig,
    seed: u64,
) -> Result<(HcdeModel, TrainingLog)> {
    let windows = split_windows(&prep.data, Split::Train, &cfg.window)?;
    let mut model = HcdeModel::new(
        cfg.clone(),
        prep.data.n_x(),
        prep.data.n_u(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    let log = train_hcde(&mut model, &windows, training, seed).with_context(|| format!("training seed {seed}"))?;
    Ok((model, log))
}

pub fn fit_residual(prep: &Prepared, cfg: &ResidualConfig, seed: u64) -> Result<(ResidualModel, Vec<ResidualEpoch>)> {
    Ok(train_residual(&prep.train_units(), cfg, seed)?)
}

fn truth(unit: &Unit, k: usize) -> Result<f64> {
    unit.truth_for_eval()
        .map(|d| d[k])
        .with_context(|| format!("unit {} has no ground-truth damage", unit.id))
}

pub fn hcde_rows(model: &HcdeModel, data: &TrajectoryDataset, split: Split) -> Result<Vec<EmbeddingRow>> {
    let windows = split_windows(data, split, &model.config.window)?;
    infer_degradation(model, &windows)?
        .into_iter()
        .map(|e| {
            let unit = &data.units[e.unit];
            Ok(EmbeddingRow {
                unit_id: unit.id.clone(),
                anchor_t: e.anchor_time,
                truth: truth(unit, e.anchor)?,
                values: e.state,
                nfe: Some(e.nfe),
            })
        })
        .collect()
}

/// Residual embeddings at the H-CDE anchors of `window`, so both methods
/// are scored on the same points.
pub fn residual_rows(
    model: &ResidualModel,
    data: &TrajectoryDataset,
    split: Split,
    window: &WindowConfig,
) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::new();
    for (_, unit) in data.split_units(split) {
        for p in residual_at(model, unit, &window.anchors(unit.len()))? {
            rows.push(EmbeddingRow {
                unit_id: unit.id.clone(),
                anchor_t: p.t,
                truth: truth(unit, p.k)?,
                values: p.residual,
                nfe: None,
            });
        }
    }
    Ok(rows)
}

/// Embeddings of every split a method is scored on.
pub struct Embeddings {
    pub train: Vec<EmbeddingRow>,
    pub tests: Vec<(Split, Vec<EmbeddingRow>)>,
}

impl Embeddings {
    pub fn of(artifact: &Artifact, prep: &Prepared, window: &WindowConfig) -> Result<Self> {
        let rows = |split: Split| match artifact {
            Artifact::Hcde { model, .. } => hcde_rows(model, &prep.data, split),
            Artifact::Residual { model, .. } => residual_rows(model, &prep.data, split, window),
        };
        let train = rows(Split::Train)?;
        if train.is_empty() {
            bail!("no training windows: units are shorter than the window");
        }
        let tests = prep
            .test_splits()
            .into_iter()
            .map(|s| Ok((s, rows(s)?)))
            .collect::<Result<_>>()?;
        Ok(Self { train, tests })
    }

    pub fn scores(&self) -> Result<Vec<SplitScore>> {
        self.tests
            .iter()
            .map(|(s, rows)| score_split(&self.train, rows).with_context(|| format!("scoring {}", s.tag())))
            .collect()
    }

    /// Two-component PCA of the training embeddings, or one component when
    /// the embedding is one-dimensional.
    pub fn pca(&self) -> Result<Pca> {
        let train: Vec<Vec<f64>> = self.train.iter().map(|r| r.values.clone()).collect();
        let k = train.first().map_or(1, |r| r.len().min(2));
        Ok(Pca::fit(&train, k)?)
    }
}
