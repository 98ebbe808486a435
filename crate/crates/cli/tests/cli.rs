mod common;

use common::*;
use hcde_core::autodiff::load_checkpoint;
use hcde_lab::config::RunConfig;
use hcde_lab::pipeline::{Artifact, ARTIFACT_FORMAT};

#[test]
fn simulate_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["simulate", "--units", "2", "--scenario", "A", "--seed", "7", "--out", s(dir), "simulate.sim.damage.beta=0.01"]);
    }
    let fa = files(&a, "csv");
    assert_eq!(fa.len(), 2);
    assert_eq!(fa, files(&b, "csv"));
    assert_eq!(files(&a, "json"), files(&b, "json"));
    assert_eq!(std::fs::read(a.join("config.toml")).unwrap(), std::fs::read(b.join("config.toml")).unwrap());
    let manifest = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"id-test\""), "{manifest}");
}

#[test]
fn non_empty_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let args = ["simulate", "--units", "1", "--scenario", "B", "--out", s(&out), "simulate.sim.damage.beta=0.02"];
    ok(&args);
    let again = run(&args);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn unknown_and_invalid_keys_are_field_level_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let r = run(&["simulate", "--out", s(&out), "hcde.window.w_ss=3"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("w_ss"));
    let r = run(&["simulate", "--out", s(&out), "hcde.window.stride=0"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("stride"));
    // Validation happens before anything is written.
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn ablation_snapshot_records_the_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("abl"));
    let cfg = toy_config();
    ok(&["simulate", "--config", s(&cfg), "--out", s(&data)]);
    ok(&with_tiny(&[
        "ablate", "--config", s(&cfg), "--data", s(&data), "--out", s(&out),
        "ablate.variants=[\"no-mc\"]", "ablate.residual=false",
    ]));
    let dir = out.join("no-mc/seed-0");
    let snap: RunConfig = toml::from_str(&std::fs::read_to_string(dir.join("config.toml")).unwrap()).unwrap();
    assert!(!snap.hcde.with_mc);
    assert!(snap.hcde.with_pt);
    let artifact: Artifact = load_checkpoint(&dir.join("hcde.json"), ARTIFACT_FORMAT).unwrap();
    let Artifact::Hcde { model, .. } = artifact else { panic!("not an H-CDE artifact") };
    assert!(model.path.is_some(), "h_psi must be kept when only MC is ablated");
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.starts_with("no-mc:")), "{table}");
}

#[test]
fn sweep_reports_one_row_per_slow_step() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("sweep"));
    let cfg = toy_config();
    ok(&["simulate", "--config", s(&cfg), "--out", s(&data), "simulate.units_b=0"]);
    ok(&with_tiny(&["sweep-slow-step", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let keys: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(keys, ["1", "3", "6", "12"], "{table}");
}
