//! PCA, OLS alignment scores, monotonicity, and plot-ready exports.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal axes of a training embedding set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` unit-norm components, each with its largest-magnitude loading
    /// positive.
    pub components: Vec<Vec<f64>>,
    /// Variance share of every component (all dimensions, sums to 1).
    pub explained_ratio: Vec<f64>,
}

fn check_rows(data: &[Vec<f64>]) -> Result<usize> {
    let dim = data.first().map(Vec::len).ok_or_else(|| Error::Invalid("no embeddings".into()))?;
    if dim == 0 || data.iter().any(|r| r.len() != dim) {
        return Err(Error::Invalid("embeddings must share a nonzero dimension".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding value".into()));
    }
    Ok(dim)
}

impl Pca {
    pub fn fit(data: &[Vec<f64>], k: usize) -> Result<Self> {
        let dim = check_rows(data)?;
        if k == 0 || k > dim {
            return Err(Error::Invalid(format!("cannot keep {k} components of {dim} dimensions")));
        }
        if data.len() < k.max(2) {
            return Err(Error::Invalid(format!("PCA needs at least {} samples", k.max(2))));
        }
        let n = data.len();
        let mut mean = vec![0.0; dim];
        for r in data {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for r in data {
            let c = DVector::from_iterator(dim, r.iter().zip(&mean).map(|(v, m)| v - m));
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = values.iter().sum();
        let explained_ratio = if total > 0.0 {
            values.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / dim as f64; dim]
        };
        let components = order[..k]
            .iter()
            .map(|&i| {
                let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let lead = c.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
                if lead < 0.0 {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
                c
            })
            .collect();
        Ok(Self {
            mean,
            components,
            explained_ratio,
        })
    }

    pub fn transform(&self, data: &[Vec<f64>]) -> Vec<Vec<f64>> {
        data.iter()
            .map(|r| {
                self.components
                    .iter()
                    .map(|c| c.iter().zip(r.iter().zip(&self.mean)).map(|(w, (v, m))| w * (v - m)).sum())
                    .collect()
            })
            .collect()
    }

    pub fn inverse_transform(&self, projected: &[Vec<f64>]) -> Vec<Vec<f64>> {
        projected
            .iter()
            .map(|p| {
                let mut out = self.mean.clone();
                for (c, s) in self.components.iter().zip(p) {
                    for (o, w) in out.iter_mut().zip(c) {
                        *o += s * w;
                    }
                }
                out
            })
            .collect()
    }
}

pub fn pca_fit_transform(train: &[Vec<f64>], k: usize) -> Result<(Pca, Vec<Vec<f64>>)> {
    let pca = Pca::fit(train, k)?;
    let projected = pca.transform(train);
    Ok((pca, projected))
}

/// Least-squares linear model with intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ols {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl Ols {
    /// Minimum-norm solution via SVD, so collinear or constant features
    /// still give a well-defined fit.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let dim = check_rows(x)?;
        if x.len() != y.len() {
            return Err(Error::Invalid(format!("{} rows but {} targets", x.len(), y.len())));
        }
        let n = x.len();
        // Centering separates the intercept and improves conditioning.
        let xm: Vec<f64> = (0..dim).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let a = DMatrix::from_fn(n, dim, |i, j| x[i][j] - xm[j]);
        let b = DVector::from_iterator(n, y.iter().map(|v| v - ym));
        let scale = a.amax().max(1e-300);
        let svd = (a / scale).svd(true, true);
        let eps = 1e-10 * svd.singular_values.max().max(1e-300);
        let w = svd
            .solve(&b, eps)
            .map_err(|e| Error::Singular(format!("OLS: {e}")))?
            / scale;
        let coef: Vec<f64> = w.iter().copied().collect();
        let intercept = ym - coef.iter().zip(&xm).map(|(c, m)| c * m).sum::<f64>();
        Ok(Self { intercept, coef })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// `1 - SS_res / SS_tot`, or `None` when the truth has no variance.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Option<f64> {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return None;
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    AllDims,
    Pc1,
}

/// Test-set R² of an OLS map from embeddings to truth fitted on the
/// training set. `None` if the test truth is constant.
pub fn alignment_score(
    train: &[Vec<f64>],
    train_truth: &[f64],
    test: &[Vec<f64>],
    test_truth: &[f64],
    mode: AlignMode,
) -> Result<Option<f64>> {
    if test.len() != test_truth.len() || test.is_empty() {
        return Err(Error::Invalid("test embeddings and truth must be non-empty and aligned".into()));
    }
    let (train_x, test_x) = match mode {
        AlignMode::AllDims => (train.to_vec(), test.to_vec()),
        AlignMode::Pc1 => {
            let pca = Pca::fit(train, 1)?;
            (pca.transform(train), pca.transform(test))
        }
    };
    let ols = Ols::fit(&train_x, train_truth)?;
    let pred: Vec<f64> = test_x.iter().map(|r| ols.predict(r)).collect();
    Ok(r_squared(test_truth, &pred))
}

/// Share of consecutive steps that do not decrease (tolerance 1e-9).
pub fn monotonicity_fraction(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Invalid("monotonicity needs at least 2 points".into()));
    }
    let up = series.windows(2).filter(|w| w[1] - w[0] >= -1e-9).count();
    Ok(up as f64 / (series.len() - 1) as f64)
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SeedSummary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n.max(1.0);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { values, mean, std }
    }
}

/// One embedding with its ground truth, ready for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub unit_id: String,
    pub anchor_t: f64,
    pub values: Vec<f64>,
    pub truth: f64,
    /// Slow-solve NFE, for H-CDE embeddings.
    pub nfe: Option<usize>,
}

/// Scores of one seed on one test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub r2_all: Option<f64>,
    pub r2_pc1: Option<f64>,
    /// Mean over units of the PC1 monotonicity fraction.
    pub monotonicity: f64,
    pub mean_nfe: Option<f64>,
}

fn column(rows: &[EmbeddingRow]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (rows.iter().map(|r| r.values.clone()).collect(), rows.iter().map(|r| r.truth).collect())
}

/// Scores `test` against a regressor fitted on `train`; both PCA and OLS
/// are fitted on training embeddings only.
pub fn score_split(train: &[EmbeddingRow], test: &[EmbeddingRow]) -> Result<SplitScore> {
    let (tx, ty) = column(train);
    let (sx, sy) = column(test);
    let r2_all = alignment_score(&tx, &ty, &sx, &sy, AlignMode::AllDims)?;
    let r2_pc1 = alignment_score(&tx, &ty, &sx, &sy, AlignMode::Pc1)?;
    let pca = Pca::fit(&tx, 1)?;
    let mut units: Vec<&str> = test.iter().map(|r| r.unit_id.as_str()).collect();
    units.sort_unstable();
    units.dedup();
    let mut fractions = Vec::new();
    for u in units {
        let mut rows: Vec<&EmbeddingRow> = test.iter().filter(|r| r.unit_id == u).collect();
        rows.sort_by(|a, b| a.anchor_t.total_cmp(&b.anchor_t));
        let pc1: Vec<f64> = pca
            .transform(&rows.iter().map(|r| r.values.clone()).collect::<Vec<_>>())
            .into_iter()
            .map(|p| p[0])
            .collect();
        if pc1.len() >= 2 {
            fractions.push(monotonicity_fraction(&pc1)?);
        }
    }
    let nfe: Vec<usize> = test.iter().filter_map(|r| r.nfe).collect();
    Ok(SplitScore {
        r2_all,
        r2_pc1,
        monotonicity: fractions.iter().sum::<f64>() / fractions.len().max(1) as f64,
        mean_nfe: (!nfe.is_empty()).then(|| nfe.iter().sum::<usize>() as f64 / nfe.len() as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub r2_all: SeedSummary,
    pub r2_pc1: SeedSummary,
    pub monotonicity: SeedSummary,
    pub mean_slow_nfe: Option<SeedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub method: String,
    pub seeds: Vec<u64>,
    /// Per-seed PCA explained-variance ratios of the training embeddings.
    pub explained_variance: Vec<Vec<f64>>,
    pub splits: Vec<SplitReport>,
}

impl AlignmentReport {
    /// Collects per-seed scores, `scores[seed][split]`, in `splits` order.
    /// Undefined R² values (constant truth) are reported as NaN.
    pub fn from_scores(
        method: &str,
        seeds: &[u64],
        explained_variance: Vec<Vec<f64>>,
        splits: &[String],
        scores: &[Vec<SplitScore>],
    ) -> Self {
        let pick = |i: usize, f: &dyn Fn(&SplitScore) -> Option<f64>| -> Vec<f64> {
            scores.iter().map(|s| f(&s[i]).unwrap_or(f64::NAN)).collect()
        };
        let splits = splits
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let nfe: Vec<Option<f64>> = scores.iter().map(|s| s[i].mean_nfe).collect();
                SplitReport {
                    split: name.clone(),
                    r2_all: SeedSummary::new(pick(i, &|s| s.r2_all)),
                    r2_pc1: SeedSummary::new(pick(i, &|s| s.r2_pc1)),
                    monotonicity: SeedSummary::new(pick(i, &|s| Some(s.monotonicity))),
                    mean_slow_nfe: nfe
                        .iter()
                        .all(Option::is_some)
                        .then(|| SeedSummary::new(nfe.iter().map(|v| v.unwrap()).collect())),
                }
            })
            .collect();
        Self {
            method: method.to_string(),
            seeds: seeds.to_vec(),
            explained_variance,
            splits,
        }
    }

    pub fn split(&self, name: &str) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == name)
    }
}

/// Shortest round-trip formatting, so bytes depend only on values.
fn fmt(v: f64) -> String {
    v.to_string()
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// `unit_id, anchor_t, dim_0..`
pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut header = vec!["unit_id".to_string(), "anchor_t".to_string()];
    header.extend((0..dim).map(|i| format!("dim_{i}")));
    write_rows(
        path,
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![r.unit_id.clone(), fmt(r.anchor_t)];
            rec.extend(r.values.iter().map(|&v| fmt(v)));
            rec
        }),
    )
}

/// Reads back [`write_embeddings_csv`] output; truth is left at NaN.
pub fn read_embeddings_csv(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Invalid(format!("{}: bad number {s:?}", path.display())))
        };
        out.push(EmbeddingRow {
            unit_id: rec.get(0).unwrap_or_default().to_string(),
            anchor_t: num(rec.get(1).unwrap_or_default())?,
            values: rec.iter().skip(2).map(num).collect::<Result<_>>()?,
            truth: f64::NAN,
            nfe: None,
        });
    }
    Ok(out)
}

/// PC1/PC2 scatter colored by true damage: `unit_id, split, anchor_t, pc1, pc2, d_true`.
pub fn write_scatter_csv(path: &Path, pca: &Pca, sets: &[(&str, &[EmbeddingRow])]) -> Result<()> {
    let header = ["unit_id", "split", "anchor_t", "pc1", "pc2", "d_true"].map(String::from);
    let mut rows = Vec::new();
    for (split, set) in sets {
        let proj = pca.transform(&set.iter().map(|r| r.values.clone()).collect::<Vec<_>>());
        for (r, p) in set.iter().zip(proj) {
            rows.push(vec![
                r.unit_id.clone(),
                split.to_string(),
                fmt(r.anchor_t),
                fmt(p[0]),
                fmt(p.get(1).copied().unwrap_or(0.0)),
                fmt(r.truth),
            ]);
        }
    }
    write_rows(path, &header, rows.into_iter())
}

/// Generic numeric table with a leading text key column.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[(String, Vec<f64>)]) -> Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_rows(
        path,
        &header,
        rows.iter().map(|(k, v)| {
            let mut rec = vec![k.clone()];
            rec.extend(v.iter().map(|&x| fmt(x)));
            rec
        }),
    )
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
