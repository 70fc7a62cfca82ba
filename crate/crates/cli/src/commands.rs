use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use signbart::model::{count_parameters, parameter_shapes, Checkpoint, ModelConfig};
use signbart::skeleton::{
    frame_normalize, generate_synthetic, normalize_parts, parse_parts, read_dataset, select_components,
    write_dataset, KeypointLayout, NormState, NormalizationMode, SkeletonSequence,
};
use signbart::trainer::{evaluate, gradient_check, predict_probabilities, top_k, train_model, EpochRecord};
use signbart::{Error, Result, SignBart64};

use crate::config::RunConfig;
use crate::{
    EvalArgs, Failure, GradcheckArgs, ParamsArgs, PredictArgs, PreprocessArgs, SynthArgs, TrainArgs,
};

type CmdResult = std::result::Result<(), Failure>;

/// Attaches the path to I/O errors.
fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn load(path: &Path) -> Result<Vec<SkeletonSequence>> {
    let seqs = with_path(path, read_dataset(path))?;
    if seqs.is_empty() {
        return Err(Error::Parameter(format!("{} contains no records", path.display())));
    }
    Ok(seqs)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    with_path(path, Checkpoint::load(path))
}

fn save(path: &Path, contents: &str) -> Result<()> {
    with_path(path, fs::write(path, contents).map_err(Error::from))
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let seqs = generate_synthetic(a.classes as usize, a.samples as usize, a.seed)?;
    with_path(&a.out, write_dataset(&seqs, &a.out))?;
    println!("wrote {} sequences to {}", seqs.len(), a.out.display());
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> CmdResult {
    let mode: NormalizationMode = a.mode.parse()?;
    let parts = parse_parts(&a.parts)?;
    let layout = KeypointLayout::canonical();
    let seqs = load(&a.input)?;
    let mut clamped = 0;
    let mut out = Vec::with_capacity(seqs.len());
    for s in &seqs {
        let framed = match s.state() {
            NormState::RawPixels => {
                let f = frame_normalize(s)?;
                clamped += f.clamped;
                f.sequence
            }
            NormState::FrameNormalized => s.clone(),
            NormState::PartNormalized(_) => {
                return Err(Error::State(format!(
                    "record {} is already {}; preprocess needs raw-pixels or frame-normalized input",
                    s.id,
                    s.state()
                ))
                .into())
            }
        };
        let normalized = normalize_parts(&framed, &layout, mode)?;
        out.push(select_components(&normalized, &layout, &parts)?);
    }
    with_path(&a.out, write_dataset(&out, &a.out))?;
    println!(
        "wrote {} sequences ({} keypoints, state {}) to {}",
        out.len(),
        out[0].num_keypoints(),
        out[0].state(),
        a.out.display()
    );
    if clamped > 0 {
        eprintln!("note: {clamped} coordinates outside the frame were clamped");
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = RunConfig::load(&a.config)?;
    if a.train.is_some() {
        cfg.data.train = a.train;
    }
    if a.val.is_some() {
        cfg.data.val = a.val;
    }
    if a.out.is_some() {
        cfg.data.out_dir = a.out;
    }
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::Schema(format!("no {what} given (flag or data.{what})")))
    };
    let train_path = need(&cfg.data.train, "train")?;
    let val_path = need(&cfg.data.val, "val")?;
    let out_dir = need(&cfg.data.out_dir, "out_dir")?;
    let train_set = load(&train_path)?;
    let val_set = load(&val_path)?;
    cfg.resolve_against(&train_set, &val_set)?;
    let model_cfg = cfg.model_config()?;

    with_path(&out_dir, fs::create_dir_all(&out_dir).map_err(Error::from))?;
    save(&out_dir.join("effective_config.toml"), &cfg.to_toml())?;
    let log_path = out_dir.join("run_log.jsonl");
    let mut log = with_path(&log_path, File::create(&log_path).map_err(Error::from))?;
    let epochs = cfg.train.epochs;
    let mut on_epoch = |r: &EpochRecord| -> Result<()> {
        writeln!(log, "{}", r.to_json_line())?;
        log.flush()?;
        println!(
            "epoch {}/{epochs}  loss {:.4}  acc {:.4}  val@1 {:.4}  val@5 {:.4}  lr {:.3e}",
            r.epoch, r.train_loss, r.train_acc, r.val_top1, r.val_top5, r.lr
        );
        Ok(())
    };
    let model = SignBart64::new(model_cfg, cfg.train.seed)?;
    let outcome = train_model(model, &train_set, &val_set, &cfg.train, &mut on_epoch)?;
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");
    with_path(&best_path, outcome.best.save(&best_path))?;
    with_path(&last_path, outcome.last.save(&last_path))?;
    println!(
        "best epoch {} (val@1 {:.4}), {} optimizer steps; wrote {}",
        outcome.best.metadata.epoch,
        outcome.best.metadata.val_top1.unwrap_or(0.0),
        outcome.steps,
        out_dir.display()
    );
    Ok(())
}

/// Rejects data whose preprocessing differs from the checkpoint's training data.
fn check_compatible(ckpt: &Checkpoint, seqs: &[SkeletonSequence]) -> Result<()> {
    let state = seqs[0].state().to_string();
    if let Some(expected) = &ckpt.metadata.data_state {
        if *expected != state {
            return Err(Error::State(format!(
                "input data is {state} but the model was trained on {expected} data"
            )));
        }
    }
    let k = ckpt.model.config().num_keypoints;
    if seqs[0].num_keypoints() != k {
        return Err(Error::Schema(format!(
            "input has {} keypoints per frame, checkpoint expects {k}",
            seqs[0].num_keypoints()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    checkpoint: String,
    data: String,
    samples: usize,
    recall: serde_json::Map<String, serde_json::Value>,
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let seqs = load(&a.data)?;
    check_compatible(&ckpt, &seqs)?;
    let recall = evaluate(&ckpt.model, &seqs, &a.topk)?;
    let metrics = Metrics {
        checkpoint: a.ckpt.display().to_string(),
        data: a.data.display().to_string(),
        samples: seqs.len(),
        recall: recall
            .iter()
            .map(|(k, v)| (format!("recall@{k}"), serde_json::json!(v)))
            .collect(),
    };
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    let out = a.out.unwrap_or_else(|| {
        let mut p = a.ckpt.clone().into_os_string();
        p.push(".metrics.json");
        p.into()
    });
    save(&out, &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct Ranked {
    class: usize,
    gloss: Option<String>,
    probability: f64,
}

#[derive(Serialize)]
struct Prediction {
    id: String,
    frames: usize,
    /// Frame count before truncation to the model's maximum length.
    truncated_from: Option<usize>,
    label: Option<usize>,
    top: Vec<Ranked>,
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let seqs = load(&a.input)?;
    check_compatible(&ckpt, &seqs)?;
    let cfg: &ModelConfig = ckpt.model.config();
    if a.top == 0 || a.top > cfg.num_classes {
        return Err(Error::Parameter(format!(
            "--top must lie in 1..={}, got {}",
            cfg.num_classes, a.top
        ))
        .into());
    }
    let probs = predict_probabilities(&ckpt.model, &seqs)?;
    let mut lines = String::new();
    for (s, p) in seqs.iter().zip(&probs) {
        let t = s.num_frames();
        let pred = Prediction {
            id: s.id.clone(),
            frames: t.min(cfg.max_len),
            truncated_from: (t > cfg.max_len).then_some(t),
            label: s.label,
            top: top_k(p, a.top)
                .into_iter()
                .map(|c| Ranked {
                    class: c,
                    gloss: ckpt.metadata.glosses.get(c).cloned().flatten(),
                    probability: p[c],
                })
                .collect(),
        };
        lines += &serde_json::to_string(&pred).expect("predictions serialize");
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(out) = &a.out {
        save(out, &lines)?;
    }
    Ok(())
}

pub fn params(a: ParamsArgs) -> CmdResult {
    let cfg = RunConfig::load(&a.config)?.model_config()?;
    let shapes = parameter_shapes(&cfg);
    let width = shapes.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let mut sum = 0;
    for (name, shape) in &shapes {
        let n: usize = shape.iter().product();
        sum += n;
        println!("{name:<width$}  {:<12}  {n:>10}", format!("{shape:?}"));
    }
    let total = count_parameters(&cfg);
    debug_assert_eq!(sum, total);
    println!("{:<width$}  {:<12}  {total:>10}", "total", "");
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    if !(a.tolerance > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", a.tolerance)).into());
    }
    let cfg = match &a.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?.model_config()?;
            cfg.dropout = 0.0;
            cfg
        }
        None => ModelConfig::tiny(),
    };
    let report = gradient_check(&cfg, a.tolerance)?;
    let width = report.entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
    for e in &report.entries {
        println!(
            "{:<width$}  {:>6}  max_abs {:.3e}  max_rel {:.3e}  {}",
            e.name,
            e.numel,
            e.max_abs_error,
            e.max_rel_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = report.failures().count();
    println!(
        "{} tensors, {failed} failed, max relative error {:.3e}, tolerance {:.1e}",
        report.entries.len(),
        report.max_rel_error(),
        a.tolerance
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}
