//! Helpers for driving the `emosup` binary from tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn emosup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emosup"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = emosup(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub const QUICK: [&str; 4] = ["--epochs", "2", "--steps-per-epoch", "20"];

pub fn corpus(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    ok(&["gen-corpus", "--out", p(&dir), "--identities", "3", "--per-emotion", "2"]);
    dir.join("manifest.json")
}

pub fn checkpoint(root: &Path, manifest: &Path) -> PathBuf {
    let dir = root.join("pepl");
    let mut args = vec!["pretrain-pepl", "--out", p(&dir), "--manifest", p(manifest)];
    args.extend(QUICK);
    ok(&args);
    dir.join("checkpoint.json")
}

/// Runs every command into `root` and returns the output directories.
pub fn run_all(root: &Path) -> Vec<PathBuf> {
    let manifest = corpus(root);
    let ckpt = checkpoint(root, &manifest);
    let features = manifest.parent().unwrap().join("features.json");
    let with_corpus = |cmd: &str, name: &str, extra: &[&str]| {
        let dir = root.join(name);
        let mut args = vec![cmd, "--out", p(&dir), "--manifest", p(&manifest)];
        args.extend(extra);
        ok(&args);
        dir
    };
    let mut dirs = vec![manifest.parent().unwrap().to_path_buf(), ckpt.parent().unwrap().to_path_buf()];
    let mut ablation = vec![];
    ablation.extend(QUICK);
    dirs.push(with_corpus("pretrain-vtedc-ablation", "ablation", &ablation));
    dirs.push(with_corpus("analyze-gap", "gap", &[]));
    let mut demo = vec!["--checkpoint", p(&ckpt)];
    demo.extend(QUICK);
    dirs.push(with_corpus("supervise-demo", "demo", &demo));
    dirs.push(with_corpus("sweep-lambda", "sweep", &[&demo[..], &["--grid", "0,0.4"]].concat()));
    dirs.push(with_corpus("export-diffs", "diffs", &["--checkpoint", p(&ckpt), "--non-corresponding"]));
    let pools = root.join("pools");
    ok(&["derive-pools", "--out", p(&pools), "--matrix", p(&root.join("gap/report.json"))]);
    dirs.push(pools);
    let metrics = root.join("metrics");
    ok(&["eval-metrics", "--out", p(&metrics), "--real", p(&features), "--gen", p(&features)]);
    dirs.push(metrics);
    dirs
}

