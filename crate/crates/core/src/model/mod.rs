//! The SignBart classifier: configuration, parameters, masks, the network
//! itself and checkpoint files.

mod checkpoint;
mod config;
mod mask;
mod network;
mod params;

pub use checkpoint::{Checkpoint, CheckpointMetadata, FORMAT_VERSION};
pub use config::ModelConfig;
pub use mask::{causal_mask, padding_mask, AttentionMask, MASK_VALUE};
pub use network::{
    multi_head_attention, positional_encoding, project_coordinates, AttentionWeights, BatchMasks,
    ForwardOutput, SignBart, Stream,
};
pub use params::{count_parameters, parameter_shapes, BoundParams, ModelParameters};
