//! One function per subcommand. Every command writes a resolved config
//! snapshot next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use hcde_core::autodiff::{load_checkpoint, save_checkpoint};
use hcde_core::beamsim::{run_to_failure, unit_seed, Scenario, SimUnit, UnitManifest};
use hcde_core::datasets::{
    split_units, split_windows, write_dataset, RoleMap, SlowFastSample, Split, TrajectoryDataset, Unit,
};
use hcde_core::eval::{
    write_embeddings_csv, write_json, write_scatter_csv, write_table_csv, AlignmentReport, Pca, SplitScore,
};
use hcde_core::hcde::{slow_trajectory, transformed_path, HcdeModel, TrainingLog};
use log::info;

use crate::config::{RunConfig, Variant};
use crate::pipeline::{fit_hcde, fit_residual, Artifact, Embeddings, Prepared, ARTIFACT_FORMAT};

pub const WORKERS_ENV: &str = "HCDE_WORKERS";
pub const HCDE_FILE: &str = "hcde.json";
pub const RESIDUAL_FILE: &str = "residual.json";

/// Creates `out`, refusing to mix with a previous run unless `force`, in
/// which case the old contents are removed first.
pub fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let used = fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if used {
            if !force {
                bail!(
                    "{} is not empty (partial or previous run); pass --force to overwrite",
                    out.display()
                );
            }
            fs::remove_dir_all(out)?;
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}

/// Worker threads from the environment, default 1.
pub fn workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("{WORKERS_ENV} must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(1),
    }
}

/// Runs `f` over `jobs` on the configured number of threads. Each job is
/// single-threaded and results come back in job order, so outputs do not
/// depend on scheduling.
pub fn fan_out<J: Sync, T: Send>(jobs: &[J], f: impl Fn(&J) -> Result<T> + Sync) -> Result<Vec<T>> {
    let n = workers()?.min(jobs.len()).max(1);
    if n == 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..n {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

// ---------------------------------------------------------------- simulate

/// Simulates the configured units. `units` and `scenario` narrow the
/// config: with a scenario only that scenario is simulated.
pub fn simulate(cfg: &RunConfig, out: &Path, units: Option<usize>, scenario: Option<Scenario>) -> Result<()> {
    let s = &cfg.simulate;
    let count = |sc: Scenario, n: usize| match scenario {
        Some(only) if only != sc => 0,
        _ => units.unwrap_or(n),
    };
    let jobs: Vec<(Scenario, usize)> = [(Scenario::A, s.units_a), (Scenario::B, s.units_b)]
        .into_iter()
        .flat_map(|(sc, n)| (0..count(sc, n)).map(move |i| (sc, i)))
        .collect();
    if jobs.is_empty() {
        bail!("no units to simulate");
    }
    let sims: Vec<SimUnit> = fan_out(&jobs, |&(sc, i)| {
        let seed = unit_seed(s.seed, sc, i);
        let sim = run_to_failure(&s.sim, sc, seed, i as f64 * s.offset_days)?;
        info!("{}{i}: {} records, D = {:.4}", sc.tag(), sim.records.len(), sim.final_damage());
        Ok(sim)
    })?;
    let ids: Vec<String> = jobs.iter().map(|(sc, i)| format!("{}{i}", sc.tag())).collect();
    let mut ds = TrajectoryDataset::new(
        ids.iter().zip(&sims).map(|(id, sim)| Unit::from_sim(id.clone(), sim)).collect(),
        RoleMap::default(),
    )?;
    split_units(&mut ds, s.split)?;
    let manifests: Vec<(UnitManifest, &SimUnit)> = ds
        .units
        .iter()
        .zip(&sims)
        .map(|(u, sim)| {
            (
                UnitManifest {
                    unit_id: u.id.clone(),
                    scenario: sim.scenario,
                    seed: sim.seed,
                    start_day: sim.start_day,
                    split: u.split.map(|s| s.tag().to_string()),
                    records: sim.records.len(),
                    final_damage: sim.final_damage(),
                    file: format!("{}.csv", u.id),
                },
                sim,
            )
        })
        .collect();
    write_dataset(out, &manifests)?;
    cfg.write_snapshot(out)
}

// ---------------------------------------------------------------- training

fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let rows: Vec<(String, Vec<f64>)> = log
        .epochs
        .iter()
        .map(|e| {
            (
                e.epoch.to_string(),
                vec![e.train_loss, e.val_loss, e.lr, e.mean_slow_nfe, e.skipped_batches as f64],
            )
        })
        .collect();
    write_table_csv(
        path,
        &["epoch", "train_loss", "val_loss", "lr", "mean_slow_nfe", "skipped_batches"],
        &rows,
    )?;
    Ok(())
}

fn train_one_hcde(cfg: &RunConfig, prep: &Prepared, seed: u64, dir: &Path) -> Result<Artifact> {
    fs::create_dir_all(dir)?;
    let (model, log) = fit_hcde(prep, &cfg.hcde, &cfg.hcde_training, seed)?;
    info!("seed {seed}: best val loss {:.5} at epoch {:?}", log.best_val_loss, log.best_epoch);
    write_training_log(&dir.join("training_log.csv"), &log)?;
    let artifact = Artifact::Hcde {
        standardizer: prep.standardizer.clone(),
        model,
    };
    save_checkpoint(&dir.join(HCDE_FILE), ARTIFACT_FORMAT, &artifact)?;
    RunConfig {
        seeds: vec![seed],
        ..cfg.clone()
    }
    .write_snapshot(dir)?;
    Ok(artifact)
}

fn train_one_residual(cfg: &RunConfig, prep: &Prepared, seed: u64, dir: &Path) -> Result<Artifact> {
    fs::create_dir_all(dir)?;
    let (model, log) = fit_residual(prep, &cfg.residual, seed)?;
    let rows: Vec<(String, Vec<f64>)> = log
        .iter()
        .map(|e| (e.epoch.to_string(), vec![e.train_loss, e.val_loss, e.lr]))
        .collect();
    write_table_csv(&dir.join("training_log.csv"), &["epoch", "train_loss", "val_loss", "lr"], &rows)?;
    let artifact = Artifact::Residual {
        standardizer: prep.standardizer.clone(),
        model,
    };
    save_checkpoint(&dir.join(RESIDUAL_FILE), ARTIFACT_FORMAT, &artifact)?;
    RunConfig {
        seeds: vec![seed],
        ..cfg.clone()
    }
    .write_snapshot(dir)?;
    Ok(artifact)
}

pub fn train_hcde_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let prep = Prepared::load(data)?;
    cfg.write_snapshot(out)?;
    fan_out(&cfg.seeds, |&s| train_one_hcde(cfg, &prep, s, &seed_dir(out, s)))?;
    Ok(())
}

pub fn train_residual_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let prep = Prepared::load(data)?;
    cfg.write_snapshot(out)?;
    fan_out(&cfg.seeds, |&s| train_one_residual(cfg, &prep, s, &seed_dir(out, s)))?;
    Ok(())
}

// -------------------------------------------------------------- evaluation

/// Scores of one trained artifact, with the embeddings they came from.
struct Scored {
    scores: Vec<SplitScore>,
    explained: Vec<f64>,
}

fn split_tags(prep: &Prepared) -> Vec<String> {
    prep.test_splits().iter().map(|s| s.tag().to_string()).collect()
}

/// Writes embeddings and plot tables for one artifact into `dir`.
fn evaluate_artifact(cfg: &RunConfig, prep: &Prepared, artifact: &Artifact, dir: &Path, plots: bool) -> Result<Scored> {
    let emb = Embeddings::of(artifact, prep, &cfg.hcde.window)?;
    let scores = emb.scores()?;
    let pca = emb.pca()?;
    write_embeddings_csv(&dir.join("embeddings_train.csv"), &emb.train)?;
    for (split, rows) in &emb.tests {
        write_embeddings_csv(&dir.join(format!("embeddings_{}.csv", split.tag())), rows)?;
    }
    if plots {
        let mut sets: Vec<(&str, &[_])> = vec![("train", emb.train.as_slice())];
        sets.extend(emb.tests.iter().map(|(s, r)| (s.tag(), r.as_slice())));
        write_scatter_csv(&dir.join("scatter.csv"), &pca, &sets)?;
        if let Artifact::Hcde { model, .. } = artifact {
            write_hcde_plots(model, prep, dir)?;
        }
    }
    Ok(Scored {
        scores,
        explained: pca.explained_ratio,
    })
}

/// Slow latent trajectories, and the transformed path's primary component
/// next to the raw channels, for every test window.
fn write_hcde_plots(model: &HcdeModel, prep: &Prepared, dir: &Path) -> Result<()> {
    let window = model.config.window;
    let train = split_windows(&prep.data, Split::Train, &window)?;
    let last_knot = |s: &SlowFastSample| -> Result<Vec<f64>> {
        Ok(transformed_path(model, s)?.pop().expect("at least one knot"))
    };
    let features: Vec<Vec<f64>> = train.iter().map(&last_knot).collect::<Result<_>>()?;
    let path_pca = Pca::fit(&features, 1)?;

    let (n_x, n_u) = (prep.data.n_x(), prep.data.n_u());
    let mut traj_rows = Vec::new();
    let mut path_rows = Vec::new();
    for split in prep.test_splits() {
        for s in split_windows(&prep.data, split, &window)? {
            let unit = &prep.data.units[s.unit];
            let key = format!("{},{}", unit.id, split.tag());
            let traj = slow_trajectory(model, &s)?;
            for (t, z) in traj.times.iter().zip(&traj.states) {
                let mut v = vec![s.anchor_time, *t];
                v.extend(z);
                traj_rows.push((key.clone(), v));
            }
            let pc = path_pca.transform(&[last_knot(&s)?])[0][0];
            let mut v = vec![s.anchor_time, pc];
            v.extend(unit.x(s.anchor));
            v.extend(unit.u(s.anchor));
            v.push(unit.truth_for_eval().map_or(f64::NAN, |d| d[s.anchor]));
            path_rows.push((key, v));
        }
    }
    let m_d = model.config.m_d;
    let mut header: Vec<String> = ["unit_split", "anchor_t", "tau"].map(String::from).to_vec();
    header.extend((0..m_d).map(|i| format!("d_{i}")));
    write_split_key_table(&dir.join("slow_trajectories.csv"), &header, &traj_rows)?;
    let mut header: Vec<String> = ["unit_split", "anchor_t", "path_pc1"].map(String::from).to_vec();
    header.extend((0..n_x).map(|i| format!("x_{i}")));
    header.extend((0..n_u).map(|i| format!("u_{i}")));
    header.push("d_true".into());
    write_split_key_table(&dir.join("transformed_path.csv"), &header, &path_rows)?;
    Ok(())
}

fn write_split_key_table(path: &Path, header: &[String], rows: &[(String, Vec<f64>)]) -> Result<()> {
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table_csv(path, &h, rows)?;
    Ok(())
}

/// Long-format summary with one row per (method, split).
fn write_summary_csv(path: &Path, key: &str, reports: &[(String, &AlignmentReport)]) -> Result<()> {
    let mut rows = Vec::new();
    for (k, rep) in reports {
        for (i, s) in rep.splits.iter().enumerate() {
            let nfe = s.mean_slow_nfe.as_ref();
            rows.push((
                format!("{k}:{}", s.split),
                vec![
                    i as f64,
                    rep.seeds.len() as f64,
                    s.r2_all.mean,
                    s.r2_all.std,
                    s.r2_pc1.mean,
                    s.r2_pc1.std,
                    s.monotonicity.mean,
                    s.monotonicity.std,
                    nfe.map_or(f64::NAN, |n| n.mean),
                    nfe.map_or(f64::NAN, |n| n.std),
                ],
            ));
        }
    }
    write_table_csv(
        path,
        &[
            &format!("{key}:split"),
            "split_index",
            "seeds",
            "r2_all_mean",
            "r2_all_std",
            "r2_pc1_mean",
            "r2_pc1_std",
            "monotonicity_mean",
            "monotonicity_std",
            "slow_nfe_mean",
            "slow_nfe_std",
        ],
        &rows,
    )?;
    Ok(())
}

/// Per-seed long-format scores: `method:seed:split` keyed.
fn write_seed_scores_csv(path: &Path, rows: &[(String, u64, &[String], &[SplitScore])]) -> Result<()> {
    let mut out = Vec::new();
    for (method, seed, splits, scores) in rows {
        for (split, s) in splits.iter().zip(scores.iter()) {
            out.push((
                format!("{method}:{seed}:{split}"),
                vec![
                    s.r2_all.unwrap_or(f64::NAN),
                    s.r2_pc1.unwrap_or(f64::NAN),
                    s.monotonicity,
                    s.mean_nfe.unwrap_or(f64::NAN),
                ],
            ));
        }
    }
    write_table_csv(
        path,
        &["method:seed:split", "r2_all", "r2_pc1", "monotonicity", "slow_nfe"],
        &out,
    )?;
    Ok(())
}

/// Seeds with a model artifact under `models`, in ascending order.
fn artifact_dirs(models: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(models).with_context(|| format!("reading {}", models.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        for file in [HCDE_FILE, RESIDUAL_FILE] {
            let p = entry.path().join(file);
            if p.exists() {
                found.push((seed, p));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no seed-*/{{{HCDE_FILE},{RESIDUAL_FILE}}} artifacts under {}", models.display());
    }
    Ok(found)
}

pub fn evaluate(cfg: &RunConfig, data: &Path, models: &Path, out: &Path) -> Result<()> {
    let found = artifact_dirs(models)?;
    let artifacts: Vec<(u64, Artifact)> = found
        .iter()
        .map(|(seed, p)| Ok((*seed, load_checkpoint(p, ARTIFACT_FORMAT)?)))
        .collect::<Result<_>>()?;
    let method = artifacts[0].1.method();
    if artifacts.iter().any(|(_, a)| a.method() != method) {
        bail!("{} mixes model kinds", models.display());
    }
    let prep = Prepared::load_with(data, artifacts[0].1.standardizer())?;
    cfg.write_snapshot(out)?;
    let scored = fan_out(&artifacts, |(seed, a)| {
        let dir = seed_dir(out, *seed);
        fs::create_dir_all(&dir)?;
        let prep = Prepared::load_with(data, a.standardizer())?;
        evaluate_artifact(cfg, &prep, a, &dir, true)
    })?;
    let seeds: Vec<u64> = artifacts.iter().map(|(s, _)| *s).collect();
    let tags = split_tags(&prep);
    let report = AlignmentReport::from_scores(
        method,
        &seeds,
        scored.iter().map(|s| s.explained.clone()).collect(),
        &tags,
        &scored.iter().map(|s| s.scores.clone()).collect::<Vec<_>>(),
    );
    write_json(&out.join("report.json"), &report)?;
    write_summary_csv(&out.join("report.csv"), "method", &[(method.to_string(), &report)])?;
    let per_seed: Vec<(String, u64, &[String], &[SplitScore])> = seeds
        .iter()
        .zip(&scored)
        .map(|(s, sc)| (method.to_string(), *s, tags.as_slice(), sc.scores.as_slice()))
        .collect();
    write_seed_scores_csv(&out.join("report_seeds.csv"), &per_seed)?;
    Ok(())
}

// ---------------------------------------------------------------- ablation

#[derive(Debug, Clone, Copy)]
enum Method {
    Hcde(Variant),
    Residual,
}

impl Method {
    fn tag(self) -> &'static str {
        match self {
            Method::Hcde(v) => v.tag(),
            Method::Residual => "residual",
        }
    }
}

/// Trains and scores every (method, seed) pair of `methods`.
fn train_and_score(
    cfg: &RunConfig,
    prep: &Prepared,
    methods: &[(Method, RunConfig)],
    out: &Path,
) -> Result<Vec<AlignmentReport>> {
    let jobs: Vec<(usize, u64)> = (0..methods.len())
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let scored = fan_out(&jobs, |&(m, seed)| {
        let (method, mcfg) = &methods[m];
        let dir = seed_dir(&out.join(method.tag()), seed);
        let artifact = match method {
            Method::Hcde(_) => train_one_hcde(mcfg, prep, seed, &dir)?,
            Method::Residual => train_one_residual(mcfg, prep, seed, &dir)?,
        };
        let s = evaluate_artifact(mcfg, prep, &artifact, &dir, false)?;
        info!("{} seed {seed}: {:?}", method.tag(), s.scores);
        Ok(s)
    })?;
    let tags = split_tags(prep);
    let n = cfg.seeds.len();
    let mut reports = Vec::new();
    let mut per_seed = Vec::new();
    for (m, (method, _)) in methods.iter().enumerate() {
        let mine = &scored[m * n..(m + 1) * n];
        reports.push(AlignmentReport::from_scores(
            method.tag(),
            &cfg.seeds,
            mine.iter().map(|s| s.explained.clone()).collect(),
            &tags,
            &mine.iter().map(|s| s.scores.clone()).collect::<Vec<_>>(),
        ));
        for (seed, s) in cfg.seeds.iter().zip(mine) {
            per_seed.push((method.tag().to_string(), *seed, tags.as_slice(), s.scores.as_slice()));
        }
    }
    write_seed_scores_csv(&out.join("ablation_seeds.csv"), &per_seed)?;
    Ok(reports)
}

pub fn ablate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let prep = Prepared::load(data)?;
    cfg.write_snapshot(out)?;
    let mut methods: Vec<(Method, RunConfig)> = cfg
        .ablate
        .variants
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            c.hcde = v.apply(&cfg.hcde);
            (Method::Hcde(v), c)
        })
        .collect();
    if cfg.ablate.residual {
        methods.push((Method::Residual, cfg.clone()));
    }
    if methods.is_empty() {
        bail!("ablate: no variants and no residual baseline requested");
    }
    let reports = train_and_score(cfg, &prep, &methods, out)?;
    write_json(&out.join("report.json"), &reports)?;
    let keyed: Vec<(String, &AlignmentReport)> = reports.iter().map(|r| (r.method.clone(), r)).collect();
    write_summary_csv(&out.join("ablation.csv"), "method", &keyed)?;
    Ok(())
}

// ------------------------------------------------------------------- sweep

pub fn sweep_slow_step(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let prep = Prepared::load(data)?;
    cfg.write_snapshot(out)?;
    let mut reports = Vec::new();
    for &dt_s in &cfg.sweep.dt_s {
        let mut c = cfg.clone();
        c.hcde.window.w_s = cfg.sweep.w_s;
        c.hcde.window.dt_s = dt_s;
        c.hcde.window.dt_f = cfg.sweep.dt_f;
        if let Some(e) = cfg.sweep.max_epochs {
            c.hcde_training.max_epochs = e;
            c.hcde_training.min_epochs = c.hcde_training.min_epochs.min(e);
        }
        c.validate().with_context(|| format!("sweep at dt_s = {dt_s}"))?;
        let dir = out.join(format!("dt_s-{dt_s}"));
        let mut r = train_and_score(&c, &prep, &[(Method::Hcde(Variant::Full), c.clone())], &dir)?
            .pop()
            .expect("one method");
        r.method = format!("dt_s={dt_s}");
        write_json(&dir.join("report.json"), &r)?;
        reports.push((dt_s.to_string(), r));
    }
    write_sweep_csv(&out.join("sweep.csv"), &reports)
}

/// One row per slow step, with the per-split columns side by side.
fn write_sweep_csv(path: &Path, reports: &[(String, AlignmentReport)]) -> Result<()> {
    let splits: Vec<String> = reports
        .first()
        .map(|(_, r)| r.splits.iter().map(|s| s.split.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["dt_s".to_string()];
    for s in &splits {
        for col in ["r2_all_mean", "r2_all_std", "r2_pc1_mean", "monotonicity_mean", "slow_nfe_mean"] {
            header.push(format!("{s}:{col}"));
        }
    }
    let rows: Vec<(String, Vec<f64>)> = reports
        .iter()
        .map(|(k, r)| {
            let v = r
                .splits
                .iter()
                .flat_map(|s| {
                    [
                        s.r2_all.mean,
                        s.r2_all.std,
                        s.r2_pc1.mean,
                        s.monotonicity.mean,
                        s.mean_slow_nfe.as_ref().map_or(f64::NAN, |n| n.mean),
                    ]
                })
                .collect();
            (k.clone(), v)
        })
        .collect();
    write_split_key_table(path, &header, &rows)
}
