//! Tensors, reverse-mode differentiation, AdamW and the learning-rate
//! schedule.

mod optim;
mod schedule;
mod tape;
mod tensor;

pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use schedule::LrSchedule;
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;
