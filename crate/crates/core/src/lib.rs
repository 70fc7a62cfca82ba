//! SignBart: isolated sign recognition from skeleton sequences.
//!
//! The x coordinates of every frame are projected and encoded by a
//! transformer encoder; the y coordinates go through a decoder with causal
//! self-attention whose cross-attention reads the encoder output. The crate
//! also carries the keypoint preprocessing pipeline, a small autodiff
//! engine, and the training loop.

pub mod error;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod skeleton;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Tape64 = numerics::Tape<f64>;
pub type Tape32 = numerics::Tape<f32>;
pub type SignBart64 = model::SignBart<f64>;
pub type SignBart32 = model::SignBart<f32>;
