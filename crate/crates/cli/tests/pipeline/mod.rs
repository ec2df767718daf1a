//! Drives the built binary through the smoke pipeline.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml")
}

pub fn dyadic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadic"))
        .args(args)
        .env_remove("DYADIC_SEED")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) {
    let out = dyadic(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs synth through analyze under `root`, returning the stage directories
/// in pipeline order.
pub fn run_pipeline(root: &Path, config: &Path) -> Vec<PathBuf> {
    let c = config.to_str().unwrap();
    let d = |name: &str| root.join(name);
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    let (data, model, emb, seg, proto, report) = (
        d("data"),
        d("pretrain"),
        d("embed"),
        d("segment"),
        d("prototypes"),
        d("analyze"),
    );
    ok(&["-c", c, "synth", "--out", &s(&data)]);
    ok(&[
        "-c",
        c,
        "pretrain",
        "--data",
        &s(&data),
        "--out",
        &s(&model),
    ]);
    ok(&[
        "-c",
        c,
        "embed",
        "--data",
        &s(&data),
        "--model",
        &s(&model),
        "--out",
        &s(&emb),
    ]);
    ok(&[
        "-c",
        c,
        "segment",
        "--embeddings",
        &s(&emb),
        "--data",
        &s(&data),
        "--out",
        &s(&seg),
    ]);
    ok(&[
        "-c",
        c,
        "prototypes",
        "--segment",
        &s(&seg),
        "--out",
        &s(&proto),
    ]);
    ok(&[
        "-c",
        c,
        "analyze",
        "--prototypes",
        &s(&proto),
        "--data",
        &s(&data),
        "--out",
        &s(&report),
    ]);
    vec![data, model, emb, seg, proto, report]
}

/// Every regular file below `dir`, relative and sorted.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push(p.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Relative paths whose bytes differ between two trees, or that exist in
/// only one.
pub fn tree_diff(a: &Path, b: &Path) -> Vec<PathBuf> {
    let (fa, fb) = (files(a), files(b));
    let mut diff: Vec<PathBuf> = fa.iter().filter(|p| !fb.contains(p)).cloned().collect();
    diff.extend(fb.iter().filter(|p| !fa.contains(p)).cloned());
    for p in fa.iter().filter(|p| fb.contains(p)) {
        if std::fs::read(a.join(p)).unwrap() != std::fs::read(b.join(p)).unwrap() {
            diff.push(p.clone());
        }
    }
    diff
}
