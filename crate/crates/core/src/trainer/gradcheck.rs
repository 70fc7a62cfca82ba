use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ModelConfig, SignBart};
use crate::numerics::{OpKind, Tape};
use crate::skeleton::Batch;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding do not divide by zero.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Comparison for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub max_abs_error: f64,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Two random sequences of three frames; the second has only two valid
/// frames so masking is exercised.
pub fn gradcheck_batch(config: &ModelConfig, seed: u64) -> Batch {
    let (b, t, k) = (2, 3.min(config.max_len), config.num_keypoints);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = || -> Vec<f64> { (0..b * t * k).map(|_| rng.random::<f64>()).collect() };
    let (x_coords, y_coords) = (coords(), coords());
    let valid = [t, t.saturating_sub(1).max(1)];
    let frame_mask = (0..b).flat_map(|i| (0..t).map(move |j| j < valid[i])).collect();
    Batch {
        x_coords,
        y_coords,
        frame_mask,
        labels: vec![0, 1 % config.num_classes],
        lengths: valid.to_vec(),
        original_lengths: valid.to_vec(),
        batch_size: b,
        max_frames: t,
        num_keypoints: k,
    }
}

fn loss(model: &SignBart<f64>, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, false);
    let out = model.forward(&mut tape, &bound, batch, &mut ChaCha8Rng::seed_from_u64(0), false)?;
    let l = tape.cross_entropy(out.logits, &batch.labels)?;
    Ok(tape.values(l)[0])
}

/// Compares autodiff gradients of the eval-mode loss on `batch` against
/// central differences, one entry per parameter tensor. `fault` scales the
/// backward rule of one op kind, for testing the checker itself.
pub fn gradient_check_with(
    model: &SignBart<f64>,
    batch: &Batch,
    tolerance: f64,
    fault: Option<(OpKind, f64)>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    if let Some((kind, factor)) = fault {
        tape.inject_backward_fault(kind, factor);
    }
    let bound = model.params().bind(&mut tape, true);
    let out = model.forward(&mut tape, &bound, batch, &mut ChaCha8Rng::seed_from_u64(0), false)?;
    let l = tape.cross_entropy(out.logits, &batch.labels)?;
    tape.backward(l)?;

    let mut probe = model.clone();
    let mut entries = Vec::new();
    for (name, tensor) in model.params().iter() {
        let var = bound.get(name);
        let zeros = vec![0.0; tensor.len()];
        let analytic = tape.grad(var).unwrap_or(&zeros);
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = tensor.data()[i];
            probe.params_mut().get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = loss(&probe, batch)?;
            probe.params_mut().get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = loss(&probe, batch)?;
            probe.params_mut().get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric));
        }
        entries.push(TensorCheck {
            name: name.to_string(),
            numel: tensor.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed: max_rel < tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, entries })
}

/// Gradient check of a freshly initialized model on [`gradcheck_batch`].
pub fn gradient_check(config: &ModelConfig, tolerance: f64) -> Result<GradCheckReport> {
    let model = SignBart::new(config.clone(), 0)?;
    gradient_check_with(&model, &gradcheck_batch(config, 1), tolerance, None)
}
