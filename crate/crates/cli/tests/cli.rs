mod common;

use std::fs;
use std::path::Path;

use common::{config, dataset, ok, read_json_lines, s, signbart, SMALL_MODEL};

const QUICK_TRAIN: &str = "epochs = 2\nbatch_size = 4\nseed = 3";

/// Trains the small model on a 3-class set; returns the output directory.
fn trained(dir: &Path) -> std::path::PathBuf {
    let tr = dataset(dir, "train", 3, 4, 1, "three-box");
    let va = dataset(dir, "val", 3, 2, 2, "three-box");
    let cfg = config(dir, "run.toml", SMALL_MODEL, QUICK_TRAIN);
    let out = dir.join("run");
    ok(&["train", "--config", s(&cfg), "--train", s(&tr), "--val", s(&va), "--out", s(&out)]);
    out
}

#[test]
fn synth_writes_requested_count_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for p in [&a, &b] {
        ok(&["synth", "--classes", "3", "--samples", "5", "--seed", "9", "--out", s(p)]);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 15);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let r = signbart(&["synth", "--classes", "1", "--samples", "5", "--out", s(&a)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error[usage]"), "{}", r.stderr);
}

#[test]
fn preprocess_modes_and_parts() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    ok(&["synth", "--classes", "2", "--samples", "2", "--out", s(&raw)]);
    let none = dir.path().join("none.jsonl");
    ok(&["preprocess", "--in", s(&raw), "--out", s(&none), "--mode", "none"]);
    for rec in read_json_lines(&fs::read_to_string(&none).unwrap()) {
        assert_eq!(rec["state"], "part-normalized:none");
        assert_eq!(rec["frames"][0].as_array().unwrap().len(), 48);
    }
    let right = dir.path().join("right.jsonl");
    let r = ok(&["preprocess", "--in", s(&raw), "--out", s(&right), "--parts", "right"]);
    assert!(r.stdout.contains("21 keypoints"), "{}", r.stdout);
    for rec in read_json_lines(&fs::read_to_string(&right).unwrap()) {
        assert_eq!(rec["frames"][0].as_array().unwrap().len(), 21);
    }
    let again = dir.path().join("again.jsonl");
    let r = signbart(&["preprocess", "--in", s(&none), "--out", s(&again)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error[state]"), "{}", r.stderr);
    let r = signbart(&["preprocess", "--in", s(&raw), "--out", s(&again), "--mode", "four-box"]);
    assert_eq!(r.code, 1);
}

#[test]
fn train_writes_effective_config_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    for f in ["effective_config.toml", "run_log.jsonl", "best.ckpt", "last.ckpt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let effective = fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(effective.contains("base_lr = 0.0002"), "{effective}");
    assert!(effective.contains("num_keypoints = 48"), "{effective}");
    assert!(effective.contains("num_classes = 3"), "{effective}");
    let log = read_json_lines(&fs::read_to_string(out.join("run_log.jsonl")).unwrap());
    assert_eq!(log.len(), 2);

    let rerun = dir.path().join("rerun");
    ok(&["train", "--config", s(&out.join("effective_config.toml")), "--out", s(&rerun)]);
    for f in ["run_log.jsonl", "best.ckpt", "last.ckpt", "effective_config.toml"] {
        let (a, b) = (fs::read(out.join(f)).unwrap(), fs::read(rerun.join(f)).unwrap());
        if f == "effective_config.toml" {
            // Only out_dir differs.
            let strip = |b: Vec<u8>| String::from_utf8(b).unwrap().lines().filter(|l| !l.starts_with("out_dir")).collect::<Vec<_>>().join("\n");
            assert_eq!(strip(a), strip(b));
        } else {
            assert!(a == b, "{f} differs");
        }
    }
}

#[test]
fn train_rejects_unseen_validation_label() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dataset(dir.path(), "train", 3, 2, 1, "three-box");
    let va = dataset(dir.path(), "val", 4, 1, 2, "three-box");
    let cfg = config(dir.path(), "run.toml", SMALL_MODEL, QUICK_TRAIN);
    let out = dir.path().join("run");
    let r = signbart(&["train", "--config", s(&cfg), "--train", s(&tr), "--val", s(&va), "--out", s(&out)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error[schema]") && r.stderr.contains("label 3"), "{}", r.stderr);
    assert!(!out.join("best.ckpt").exists());
}

#[test]
fn train_rejects_mode_mismatch_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dataset(dir.path(), "train", 2, 2, 1, "two-box");
    let cfg = config(dir.path(), "run.toml", SMALL_MODEL, QUICK_TRAIN);
    let out = dir.path().join("run");
    let r = signbart(&["train", "--config", s(&cfg), "--train", s(&tr), "--val", s(&tr), "--out", s(&out)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error[state]"), "{}", r.stderr);
    let bad = config(dir.path(), "bad.toml", SMALL_MODEL, "learning_rate = 1.0");
    let r = signbart(&["train", "--config", s(&bad), "--train", s(&tr), "--val", s(&tr), "--out", s(&out)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error[schema]"), "{}", r.stderr);
}

#[test]
fn eval_reports_requested_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let ckpt = out.join("best.ckpt");
    let val = dir.path().join("val.jsonl");
    let r = ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&val), "--topk", "1,3"]);
    let printed: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    let recall = printed["recall"].as_object().unwrap();
    assert_eq!(recall.len(), 2);
    assert_eq!(recall["recall@3"], 1.0);
    let top1 = recall["recall@1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    let saved = fs::read_to_string(out.join("best.ckpt.metrics.json")).unwrap();
    assert_eq!(serde_json::from_str::<serde_json::Value>(&saved).unwrap(), printed);

    let bytes = fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
    let r = signbart(&["eval", "--ckpt", s(&cut), "--data", s(&val)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.starts_with("error[format]"), "{}", r.stderr);
    let r = signbart(&["eval", "--ckpt", s(&ckpt), "--data", s(&val), "--topk", "4"]);
    assert_eq!(r.code, 1);
}

#[test]
fn predict_ranks_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let ckpt = out.join("best.ckpt");
    let val = dir.path().join("val.jsonl");
    let args = ["predict", "--ckpt", s(&ckpt), "--input", s(&val), "--top", "3"];
    let r = ok(&args);
    assert_eq!(r.stdout, ok(&args).stdout);
    let preds = read_json_lines(&r.stdout);
    assert_eq!(preds.len(), 6);
    for p in &preds {
        let probs: Vec<f64> = p["top"].as_array().unwrap().iter().map(|t| t["probability"].as_f64().unwrap()).collect();
        assert_eq!(probs.len(), 3);
        assert!(probs.windows(2).all(|w| w[0] >= w[1]));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p["top"][0]["gloss"].as_str().unwrap().starts_with("SIGN_"));
        assert!(p["truncated_from"].is_null());
    }
    let r = signbart(&["predict", "--ckpt", s(&ckpt), "--input", s(&val), "--top", "4"]);
    assert_eq!(r.code, 1);
}

#[test]
fn predict_notes_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dataset(dir.path(), "train", 2, 2, 1, "three-box");
    let model = SMALL_MODEL.replace("max_len = 64", "max_len = 16");
    let cfg = config(dir.path(), "run.toml", &model, "epochs = 1\nbatch_size = 4");
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--train", s(&tr), "--val", s(&tr), "--out", s(&out)]);
    let r = ok(&["predict", "--ckpt", s(&out.join("last.ckpt")), "--input", s(&tr), "--top", "1"]);
    let records = read_json_lines(&fs::read_to_string(&tr).unwrap());
    for (p, rec) in read_json_lines(&r.stdout).iter().zip(&records) {
        let t = rec["frames"].as_array().unwrap().len();
        assert_eq!(p["frames"], t.min(16));
        if t > 16 {
            assert_eq!(p["truncated_from"], t);
        } else {
            assert!(p["truncated_from"].is_null());
        }
    }
}

#[test]
fn predict_rejects_wrong_preprocessing() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let other = dataset(dir.path(), "other", 3, 1, 5, "one-box");
    let r = signbart(&["predict", "--ckpt", s(&out.join("best.ckpt")), "--input", s(&other)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error[state]"), "{}", r.stderr);
}

#[test]
fn params_lists_every_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let example = "d_model = 8\nff_dim = 16\nheads = 2\nnum_keypoints = 75\nnum_classes = 4";
    let cfg = config(dir.path(), "example.toml", example, "");
    let r = ok(&["params", "--config", s(&cfg)]);
    let lines: Vec<&str> = r.stdout.lines().collect();
    let (total, rows) = lines.split_last().unwrap();
    assert!(total.starts_with("total") && total.ends_with(" 4260"), "{total}");
    let sum: usize = rows.iter().map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(sum, 4260);
    let bad = config(dir.path(), "bad.toml", &example.replace("heads = 2", "heads = 3"), "");
    let r = signbart(&["params", "--config", s(&bad)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("heads"), "{}", r.stderr);
}

#[test]
fn gradcheck_passes_and_fails_by_tolerance() {
    let r = ok(&["gradcheck"]);
    let rows: Vec<&str> = r.stdout.lines().filter(|l| l.ends_with(" ok") || l.ends_with(" FAIL")).collect();
    let names: Vec<&str> = rows.iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert!(names.contains(&"classifier.weight") && names.contains(&"x_projection.weight"));
    assert!(r.stdout.contains(&format!("{} tensors, 0 failed", names.len())));

    let r = signbart(&["gradcheck", "--tolerance", "1e-12"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.starts_with("error[gradcheck]"));
    assert!(r.stdout.contains(" FAIL"));
    assert_eq!(signbart(&["gradcheck", "--tolerance", "0"]).code, 1);
}
