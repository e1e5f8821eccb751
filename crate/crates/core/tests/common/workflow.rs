//! Runs the built `edgeloc` binary and fingerprints what it writes.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn edgeloc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgeloc"))
        .args(args)
        .current_dir(dir)
        .env_remove("EDGELOC_SEED")
        .output()
        .expect("spawn edgeloc")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = edgeloc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Relative path → SHA-256 of every file below `root`.
pub fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

pub const SMALL: [&str; 6] = ["--width", "512", "--height", "256", "--seed", "3"];

/// Every stage on a small scenario: simulate, all three backends, index,
/// evaluate, sweep, compare, edges and localize.
pub fn full_pipeline(dir: &Path, threads: &str) {
    let with = |args: &[&str]| {
        let mut v = vec!["--threads", threads];
        v.extend_from_slice(args);
        ok(dir, &v);
    };
    let mut sim = vec!["simulate", "--out", "sim"];
    sim.extend_from_slice(&SMALL);
    with(&sim);
    with(&["train", "--backend", "ae", "--input", "canny", "--tiles", "sim/reference", "--out", "ae.bin", "--dim", "16", "--epochs", "2"]);
    with(&["train", "--backend", "bovw", "--input", "gray", "--tiles", "sim/reference", "--out", "bovw.bin", "--dim", "8"]);
    with(&[
        "train", "--backend", "triplet", "--input", "canny", "--tiles", "sim/reference", "--tiles-alt", "sim/reference_year2", "--out", "tri.bin",
        "--dim", "8", "--epochs", "1",
    ]);
    with(&["index", "--model", "ae.bin", "--tiles", "sim/reference", "--out", "ae.idx"]);
    with(&["evaluate", "--index", "ae.idx", "--model", "ae.bin", "--views", "sim/views", "--truth", "sim/truth.json", "--out", "ev"]);
    with(&["sweep", "--axis", "rotation", "--values", "0,5", "--scenario", "sim", "--index", "ae.idx", "--model", "ae.bin", "--out", "sw"]);
    with(&["compare", "--a", "ev/report_ungated.json", "--b", "ev/report_gated.json", "--out", "cmp.json"]);
    with(&["edges", "--input", "sim/views/view_000000.pgm", "--out", "edges.pgm"]);
    with(&["localize", "--index", "ae.idx", "--view", "sim/views/view_000003.pgm", "--out", "loc.json"]);
}

pub const PIPELINE_ARTIFACTS: [&str; 11] = [
    "ae.bin",
    "tri.bin",
    "bovw.bin",
    "ae.idx",
    "ev/summary.json",
    "ev/report_gated.csv",
    "sw/sweep_rotation.json",
    "sw/sweep_rotation.svg",
    "cmp.json",
    "loc.json",
    "ev/run.json",
];
