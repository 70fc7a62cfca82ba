//! Training loop, evaluation metrics, and gradient checking.

mod config;
mod gradcheck;
mod metrics;
mod train;

pub use config::TrainConfig;
pub use gradcheck::{
    gradcheck_batch, gradient_check, gradient_check_with, relative_error, GradCheckReport, TensorCheck,
    FD_STEP, REL_ERROR_FLOOR,
};
pub use metrics::{recall_at_k, top_k};
pub use train::{
    collect_glosses, dataset_loss, evaluate, predict_probabilities, train, train_model, train_val_split,
    EpochRecord, RunLog, TrainOutcome, EVAL_BATCH,
};

use crate::error::Result;
use crate::numerics::{Tape, Var};
use crate::scalar::Scalar;

/// Mean cross-entropy of `logits: [B, C]` against `labels`, via log-sum-exp.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}
