//! Support for the end-to-end acceptance suite.
//!
//! The suite drives the command-line interface as child processes. Rather
//! than locating a separately built `signbart` binary, the test executable
//! re-runs itself with [`AS_CLI`] set and hands its arguments to
//! [`signbart_cli::run`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

/// When set, the executable behaves as the `signbart` command.
pub const AS_CLI: &str = "SIGNBART_RUN_AS_CLI";

/// Runs the command-line driver in place of the caller when [`AS_CLI`] is
/// set. Call first thing in `main`.
pub fn dispatch() -> Option<ExitCode> {
    std::env::var_os(AS_CLI)?;
    let args = std::iter::once(OsString::from("signbart")).chain(std::env::args_os().skip(1));
    Some(signbart_cli::run(args))
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs `signbart <args>` as a child process.
pub fn signbart(args: &[&str]) -> Run {
    let exe = std::env::current_exe().expect("test executable path");
    let out = Command::new(exe).env(AS_CLI, "1").args(args).output().expect("child process runs");
    Run {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Like [`signbart`], but panics with the child's stderr unless it exits 0.
pub fn ok(args: &[&str]) -> Run {
    let r = signbart(args);
    assert_eq!(r.code, 0, "signbart {args:?}\n{}", r.stderr);
    r
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `synth` then `preprocess` into `dir`; returns the processed file.
pub fn dataset(dir: &Path, name: &str, classes: u32, samples: u32, seed: u64, mode: &str) -> PathBuf {
    let raw = dir.join(format!("{name}.raw.jsonl"));
    let out = dir.join(format!("{name}.jsonl"));
    let (classes, samples, seed) = (classes.to_string(), samples.to_string(), seed.to_string());
    ok(&["synth", "--classes", &classes, "--samples", &samples, "--seed", &seed, "--out", s(&raw)]);
    ok(&["preprocess", "--in", s(&raw), "--out", s(&out), "--mode", mode]);
    out
}

/// Writes a run configuration with the given `[model]` and `[train]` bodies.
pub fn config(dir: &Path, name: &str, model: &str, train: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("[model]\n{model}\n[train]\n{train}\n")).unwrap();
    path
}

pub fn read_json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}
