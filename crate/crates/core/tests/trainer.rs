mod common;

use common::{prepared, random_tensor, rel_error, rng};
use proptest::prelude::*;
use rand::Rng;
use signbart::model::{Checkpoint, ModelConfig};
use signbart::numerics::{Tape, Tensor};
use signbart::skeleton::SkeletonSequence;
use signbart::trainer::{
    cross_entropy, dataset_loss, evaluate, recall_at_k, train, train_model, train_val_split, TrainConfig,
};
use signbart::SignBart64;

fn quick_model(classes: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        ff_dim: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 2,
        num_keypoints: 48,
        num_classes: classes,
        dropout: 0.1,
        max_len: 64,
        projection: true,
        layer_norm_eps: 1e-5,
    }
}

fn quick_train(epochs: usize, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        seed,
        ..TrainConfig::default()
    }
}

fn data() -> (Vec<SkeletonSequence>, Vec<SkeletonSequence>) {
    (prepared(3, 4, 11), prepared(3, 2, 12))
}

fn silent() -> impl FnMut(&signbart::trainer::EpochRecord) -> signbart::Result<()> {
    |_| Ok(())
}

#[test]
fn cross_entropy_closed_forms() {
    let mut tape = Tape::<f64>::new();
    let uniform = tape.constant(&Tensor::zeros(vec![2, 4]));
    let l = cross_entropy(&mut tape, uniform, &[0, 3]).unwrap();
    assert!((tape.values(l)[0] - 4f64.ln()).abs() < 1e-15);
    let certain = tape.constant(&Tensor::new(vec![1, 3], vec![0.0, 1000.0, 0.0]).unwrap());
    let l = cross_entropy(&mut tape, certain, &[1]).unwrap();
    assert_eq!(tape.values(l)[0], 0.0);
    assert_eq!(cross_entropy(&mut tape, certain, &[3]).unwrap_err().kind(), "contract");
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let (b, c) = (3, 5);
    let labels = [4, 0, 2];
    let logits = random_tensor(&mut rng(1), &[b, c]);
    let mut tape = Tape::new();
    let v = tape.leaf(&logits.clone().with_requires_grad(true));
    let l = cross_entropy(&mut tape, v, &labels).unwrap();
    tape.backward(l).unwrap();
    let grad = tape.grad(v).unwrap().to_vec();
    let loss_at = |t: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let l = cross_entropy(&mut tape, v, &labels).unwrap();
        tape.values(l)[0]
    };
    for (row, &label) in labels.iter().enumerate() {
        let z = &logits.data()[row * c..(row + 1) * c];
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        for j in 0..c {
            let closed = (z[j].exp() / norm - f64::from(j == label)) / b as f64;
            let i = row * c + j;
            assert!((grad[i] - closed).abs() < 1e-15);
            let h = 1e-6;
            let (mut up, mut down) = (logits.clone(), logits.clone());
            up.data_mut()[i] += h;
            down.data_mut()[i] -= h;
            let numeric = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
            assert!(rel_error(grad[i], numeric, 1e-6) < 1e-6, "{} vs {numeric}", grad[i]);
        }
    }
}

/// Rank of `label` in `row` under the top-k ordering: how many classes beat
/// it (higher score, or equal score and lower index).
fn rank(row: &[f64], label: usize) -> usize {
    (0..row.len())
        .filter(|&j| row[j] > row[label] || (row[j] == row[label] && j < label))
        .count()
}

#[test]
fn recall_matches_exhaustive_count_on_a_hand_table() {
    let table = vec![
        vec![0.10, 0.60, 0.20, 0.10],
        vec![0.25, 0.25, 0.40, 0.10],
        vec![0.05, 0.15, 0.30, 0.50],
    ];
    let labels = [1, 1, 0];
    let c = 4;
    let r = recall_at_k(&table, &labels, &[1, 2, c]).unwrap();
    // Label ranks: 0, 2 (class 0 ties and wins), 3.
    assert_eq!((r[&1], r[&2], r[&c]), (1.0 / 3.0, 1.0 / 3.0, 1.0));
    for k in [1, 2, c] {
        let hits = table.iter().zip(&labels).filter(|(row, &l)| rank(row, l) < k).count();
        assert_eq!(r[&k], hits as f64 / 3.0);
    }
    assert_eq!(recall_at_k(&table, &labels, &[0]).unwrap_err().kind(), "parameter");
    assert_eq!(recall_at_k(&table, &labels, &[5]).unwrap_err().kind(), "parameter");
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k(seed in any::<u64>(), rows in 1usize..12, classes in 1usize..9) {
        let mut r = rng(seed);
        // Coarse values so ties occur.
        let table: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..classes).map(|_| r.random_range(0..4) as f64 / 4.0).collect())
            .collect();
        let labels: Vec<usize> = (0..rows).map(|_| r.random_range(0..classes)).collect();
        let ks: Vec<usize> = (1..=classes).collect();
        let rec = recall_at_k(&table, &labels, &ks).unwrap();
        for k in 1..classes {
            prop_assert!(rec[&k] <= rec[&(k + 1)]);
        }
        prop_assert_eq!(rec[&classes], 1.0);
        for &k in &ks {
            let hits = table.iter().zip(&labels).filter(|(row, &l)| rank(row, l) < k).count();
            prop_assert_eq!(rec[&k], hits as f64 / rows as f64);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (tr, va) = data();
    let run = || train(&quick_model(3), &tr, &va, &quick_train(2, 5, 3), &mut silent()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
}

#[test]
fn step_count_is_epochs_times_batches() {
    let (tr, va) = data();
    for (epochs, batch) in [(2, 5), (1, 12), (3, 1), (2, 100)] {
        let out = train(&quick_model(3), &tr, &va, &quick_train(epochs, batch, 0), &mut silent()).unwrap();
        let expected = (epochs * tr.len().div_ceil(batch)) as u64;
        assert_eq!(out.steps, expected);
        assert_eq!(out.last.metadata.steps, expected);
        assert_eq!(out.log.records.len(), epochs);
    }
}

#[test]
fn one_step_on_a_single_batch_lowers_the_loss() {
    let tr = prepared(3, 4, 13);
    let mut cfg = ModelConfig::tiny();
    cfg.num_keypoints = 48;
    for seed in 0..5 {
        let model = SignBart64::new(cfg.clone(), seed).unwrap();
        let before = dataset_loss(&model, &tr, tr.len()).unwrap();
        let tc = TrainConfig {
            dropout: 0.0,
            ..quick_train(1, tr.len(), seed)
        };
        let out = train_model(model, &tr, &tr, &tc, &mut silent()).unwrap();
        assert_eq!(out.steps, 1);
        let after = dataset_loss(&out.last.model, &tr, tr.len()).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn best_checkpoint_is_the_first_peak() {
    let (tr, va) = data();
    let out = train(&quick_model(3), &tr, &va, &quick_train(4, 4, 5), &mut silent()).unwrap();
    let peak = out.log.records.iter().map(|r| r.val_top1).fold(0.0, f64::max);
    let first = out.log.records.iter().find(|r| r.val_top1 == peak).unwrap();
    assert_eq!(out.best.metadata.epoch, first.epoch);
    assert_eq!(out.best.metadata.kind, "best");
    assert_eq!(out.last.metadata.epoch, 4);
}

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let (tr, va) = data();
    let out = train(&quick_model(3), &tr, &va, &quick_train(2, 4, 6), &mut silent()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    out.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let a = evaluate(&out.best.model, &va, &[1, 2, 3]).unwrap();
    let b = evaluate(&loaded.model, &va, &[1, 2, 3]).unwrap();
    for k in [1, 2, 3] {
        assert_eq!(a[&k].to_bits(), b[&k].to_bits());
    }
    assert_eq!(loaded, out.best);
}

#[test]
fn dataset_loss_ignores_order_and_batching() {
    let seqs = prepared(3, 4, 14);
    let model = SignBart64::new(quick_model(3), 7).unwrap();
    let whole = dataset_loss(&model, &seqs, seqs.len()).unwrap();
    let mut reversed = seqs.clone();
    reversed.reverse();
    for (set, b) in [(&seqs, 1), (&seqs, 5), (&reversed, 3), (&reversed, 12)] {
        let l = dataset_loss(&model, set, b).unwrap();
        assert!((l - whole).abs() < 1e-9, "batch {b}: {l} vs {whole}");
    }
}

#[test]
fn training_rejects_bad_inputs() {
    let (tr, va) = data();
    let cfg = quick_train(1, 4, 0);
    let err = train(&quick_model(3), &[], &va, &cfg, &mut silent()).unwrap_err();
    assert_eq!(err.kind(), "parameter");
    let err = train(&quick_model(2), &tr, &va, &cfg, &mut silent()).unwrap_err();
    assert_eq!(err.kind(), "schema");
    let bad = TrainConfig {
        batch_size: 0,
        ..cfg
    };
    assert!(train(&quick_model(3), &tr, &va, &bad, &mut silent()).unwrap_err().is_validation());
}

#[test]
fn epoch_callback_sees_every_record_and_can_abort() {
    let (tr, va) = data();
    let mut seen = Vec::new();
    train(&quick_model(3), &tr, &va, &quick_train(3, 6, 1), &mut |r| {
        seen.push(r.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    let err = train(&quick_model(3), &tr, &va, &quick_train(3, 6, 1), &mut |_| {
        Err(signbart::Error::Parameter("stop".into()))
    })
    .unwrap_err();
    assert_eq!(err.to_string(), signbart::Error::Parameter("stop".into()).to_string());
}

#[test]
fn run_log_lines_have_fixed_keys() {
    let (tr, va) = data();
    let out = train(&quick_model(3), &tr, &va, &quick_train(2, 6, 2), &mut silent()).unwrap();
    for line in out.log.to_jsonl().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys = ["epoch", "train_loss", "train_acc", "val_top1", "val_top5", "lr", "seconds"];
        let at: Vec<usize> = keys.iter().map(|k| line.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(at.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert_eq!(v.as_object().unwrap().len(), keys.len());
        assert!(v["seconds"].is_null());
    }
}

#[test]
fn split_is_stratified() {
    let seqs = prepared(4, 10, 15);
    let (tr, va) = train_val_split(&seqs, 0.2, 3).unwrap();
    assert_eq!((tr.len(), va.len()), (32, 8));
    for c in 0..4 {
        assert_eq!(va.iter().filter(|s| s.label == Some(c)).count(), 2);
    }
    let again = train_val_split(&seqs, 0.2, 3).unwrap();
    assert_eq!(again.1, va);
}
