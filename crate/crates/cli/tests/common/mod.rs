#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_hcde-lab");

pub fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

/// Shrinks the toy profile to a few seconds per command.
pub const TINY: &[&str] = &[
    "seeds=[0]",
    "hcde.m_d=2",
    "hcde.d_z=2",
    "hcde.hidden=4",
    "hcde.path_channels=2",
    "hcde.window.stride=60",
    "hcde_training.min_epochs=1",
    "hcde_training.max_epochs=1",
    "residual.hidden=[4]",
    "residual.training.min_epochs=1",
    "residual.training.max_epochs=1",
    "sweep.w_s=8",
    "sweep.max_epochs=1",
];

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hcde-lab")
}

/// Runs and panics with stderr on failure.
pub fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "hcde-lab {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(TINY);
    v
}

/// Relative path -> bytes of every file below `dir` with extension `ext`.
pub fn files(dir: &Path, ext: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == ext) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
