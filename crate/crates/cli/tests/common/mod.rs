#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().expect("exited normally"),
            stdout: String::from_utf8(o.stdout).unwrap(),
            stderr: String::from_utf8(o.stderr).unwrap(),
        }
    }
}

pub fn signbart(args: &[&str]) -> Run {
    Command::new(env!("CARGO_BIN_EXE_signbart")).args(args).output().unwrap().into()
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn ok(args: &[&str]) -> Run {
    let r = signbart(args);
    assert_eq!(r.code, 0, "signbart {args:?}\n{}", r.stderr);
    r
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `synth` followed by `preprocess` into `dir`; returns the processed file.
pub fn dataset(dir: &Path, name: &str, classes: u32, samples: u32, seed: u64, mode: &str) -> PathBuf {
    let raw = dir.join(format!("{name}.raw.jsonl"));
    let out = dir.join(format!("{name}.jsonl"));
    ok(&["synth", "--classes", &classes.to_string(), "--samples", &samples.to_string(), "--seed", &seed.to_string(), "--out", s(&raw)]);
    ok(&["preprocess", "--in", s(&raw), "--out", s(&out), "--mode", mode]);
    out
}

/// Writes a run configuration; `extra` is appended to the `[train]` table.
pub fn config(dir: &Path, name: &str, model: &str, train: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("[model]\n{model}\n[train]\n{train}\n")).unwrap();
    path
}

pub const SMALL_MODEL: &str = "d_model = 8\nff_dim = 16\nencoder_layers = 1\ndecoder_layers = 1\nheads = 2\nmax_len = 64";

pub fn read_json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}
