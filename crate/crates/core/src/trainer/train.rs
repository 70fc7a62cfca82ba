use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{recall_at_k, top_k};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, CheckpointMetadata, ModelConfig, SignBart};
use crate::numerics::{adamw_step, LrSchedule, OptimizerState, Tape};
use crate::skeleton::{pad_batch, pad_inputs, SkeletonSequence};

/// Sequences scored per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_top1: f64,
    /// Recall@5, or recall@C when there are fewer than five classes.
    pub val_top5: f64,
    /// Learning rate of the epoch's last optimizer step.
    pub lr: f64,
    /// `None` unless wall-time logging is enabled.
    pub seconds: Option<f64>,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    /// JSON Lines, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| r.to_json_line() + "\n").collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the highest validation top-1 (earliest on ties).
    pub best: Checkpoint,
    /// Weights after the final epoch.
    pub last: Checkpoint,
    pub log: RunLog,
    /// Optimizer steps taken.
    pub steps: u64,
}

fn check_split(name: &str, seqs: &[SkeletonSequence], cfg: &ModelConfig) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::Parameter(format!("{name} set is empty")));
    }
    for s in seqs {
        if s.num_keypoints() != cfg.num_keypoints {
            return Err(Error::Schema(format!(
                "{name} record {} has {} keypoints, model expects {}",
                s.id,
                s.num_keypoints(),
                cfg.num_keypoints
            )));
        }
        match s.label {
            None => return Err(Error::Schema(format!("{name} record {} has no label", s.id))),
            Some(l) if l >= cfg.num_classes => {
                return Err(Error::Schema(format!(
                    "{name} record {} has label {l}, model has {} classes",
                    s.id, cfg.num_classes
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Glosses by class index, taken from the first record of each class.
pub fn collect_glosses(seqs: &[SkeletonSequence], classes: usize) -> Vec<Option<String>> {
    let mut out = vec![None; classes];
    for s in seqs {
        if let (Some(l), Some(g)) = (s.label, &s.gloss) {
            if l < classes && out[l].is_none() {
                out[l] = Some(g.clone());
            }
        }
    }
    out
}

/// Trains a freshly initialized model; weights are seeded by `cfg.seed`.
pub fn train(
    model_config: &ModelConfig,
    train_set: &[SkeletonSequence],
    val_set: &[SkeletonSequence],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let model = SignBart::new(model_config.clone(), cfg.seed)?;
    train_model(model, train_set, val_set, cfg, on_epoch)
}

/// Trains `model` in place of its current weights. `on_epoch` sees every
/// record as soon as the epoch finishes.
pub fn train_model(
    mut model: SignBart<f64>,
    train_set: &[SkeletonSequence],
    val_set: &[SkeletonSequence],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.set_dropout(cfg.dropout)?;
    let mcfg = model.config().clone();
    check_split("training", train_set, &mcfg)?;
    check_split("validation", val_set, &mcfg)?;
    let state = train_set[0].state();
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.state() != state) {
        return Err(Error::State(format!(
            "record {} is {}, training data is {state}",
            s.id,
            s.state()
        )));
    }

    let total = cfg.total_steps(train_set.len());
    let schedule = LrSchedule::with_warmup_fraction(cfg.base_lr, cfg.warmup_fraction, total, cfg.min_lr)?;
    let mut opt = OptimizerState::new(cfg.adamw(), model.params().iter());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let top5 = 5.min(mcfg.num_classes);
    let val_labels: Vec<usize> = val_set.iter().map(|s| s.label.unwrap()).collect();

    let mut metadata = CheckpointMetadata {
        seed: cfg.seed,
        data_state: Some(state.to_string()),
        glosses: collect_glosses(train_set, mcfg.num_classes),
        ..Default::default()
    };
    let mut log = RunLog::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut step = 0u64;
    let mut lr = 0.0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&SkeletonSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = pad_batch(&seqs, Some(mcfg.max_len))?;
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let out = model.forward(&mut tape, &bound, &batch, &mut dropout_rng, true)?;
            let loss = tape.cross_entropy(out.logits, &batch.labels)?;
            let value = tape.values(loss)[0];
            step += 1;
            if !value.is_finite() {
                return Err(Error::Numeric {
                    op: format!("training loss at optimizer step {step} (epoch {epoch})"),
                });
            }
            loss_sum += value * batch.batch_size as f64;
            correct += tape
                .values(out.logits)
                .chunks(mcfg.num_classes)
                .zip(&batch.labels)
                .filter(|(row, &l)| top_k(row, 1)[0] == l)
                .count();
            tape.backward(loss)?;
            model.params_mut().zero_grad();
            model.params_mut().collect_grads(&tape, &bound)?;
            // Step k runs at lr_at(k - 1): warmup starts at 0, the last step
            // is still above min_lr.
            lr = schedule.lr_at(step - 1);
            adamw_step(model.params_mut().iter_mut(), &mut opt, lr)?;
        }

        let probs = predict_probabilities(&model, val_set)?;
        let recall = recall_at_k(&probs, &val_labels, &[1, top5])?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_top1: recall[&1],
            val_top5: recall[&top5],
            lr,
            seconds: cfg.log_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        on_epoch(&record)?;
        metadata.epoch = epoch;
        metadata.steps = step;
        metadata.val_top1 = Some(record.val_top1);
        if best.as_ref().is_none_or(|(b, _)| record.val_top1 > *b) {
            let meta = CheckpointMetadata {
                kind: "best".into(),
                ..metadata.clone()
            };
            best = Some((record.val_top1, Checkpoint::new(model.clone(), meta)));
        }
        log.records.push(record);
    }

    let last = Checkpoint::new(
        model,
        CheckpointMetadata {
            kind: "last".into(),
            ..metadata
        },
    );
    Ok(TrainOutcome {
        best: best.expect("at least one epoch").1,
        last,
        log,
        steps: step,
    })
}

/// Eval-mode class probabilities for every sequence, in input order.
/// Sequences longer than the model's `max_len` are truncated.
pub fn predict_probabilities(model: &SignBart<f64>, seqs: &[SkeletonSequence]) -> Result<Vec<Vec<f64>>> {
    if seqs.is_empty() {
        return Err(Error::Parameter("cannot score an empty dataset".into()));
    }
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_BATCH) {
        let refs: Vec<&SkeletonSequence> = chunk.iter().collect();
        let batch = pad_inputs(&refs, Some(model.config().max_len))?;
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

/// Recall@k over a labelled dataset for each requested `k`.
pub fn evaluate(
    model: &SignBart<f64>,
    seqs: &[SkeletonSequence],
    k_values: &[usize],
) -> Result<indexmap::IndexMap<usize, f64>> {
    if seqs.is_empty() {
        return Err(Error::Parameter("cannot evaluate an empty dataset".into()));
    }
    check_split("evaluation", seqs, model.config())?;
    let probs = predict_probabilities(model, seqs)?;
    let labels: Vec<usize> = seqs.iter().map(|s| s.label.unwrap()).collect();
    recall_at_k(&probs, &labels, k_values)
}

/// Mean eval-mode cross-entropy over a labelled dataset, scored in batches
/// of `batch_size`.
pub fn dataset_loss(model: &SignBart<f64>, seqs: &[SkeletonSequence], batch_size: usize) -> Result<f64> {
    if seqs.is_empty() || batch_size == 0 {
        return Err(Error::Parameter("need a non-empty dataset and batch size".into()));
    }
    check_split("evaluation", seqs, model.config())?;
    let mut total = 0.0;
    for chunk in seqs.chunks(batch_size) {
        let refs: Vec<&SkeletonSequence> = chunk.iter().collect();
        let batch = pad_batch(&refs, Some(model.config().max_len))?;
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, false);
        let out = model.forward(&mut tape, &bound, &batch, &mut ChaCha8Rng::seed_from_u64(0), false)?;
        let loss = tape.cross_entropy(out.logits, &batch.labels)?;
        total += tape.values(loss)[0] * chunk.len() as f64;
    }
    Ok(total / seqs.len() as f64)
}

/// Stratified split: from every class, `val_fraction` of its sequences
/// (rounded to nearest) go to validation. Both halves keep input order.
pub fn train_val_split(
    seqs: &[SkeletonSequence],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Parameter(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mut by_class: indexmap::IndexMap<Option<usize>, Vec<usize>> = indexmap::IndexMap::new();
    for (i, s) in seqs.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    by_class.sort_keys();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; seqs.len()];
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let n_val = (members.len() as f64 * val_fraction).round() as usize;
        for &i in &members[..n_val] {
            is_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, v) in seqs.iter().zip(is_val) {
        if v { val.push(s.clone()) } else { train.push(s.clone()) }
    }
    Ok((train, val))
}
