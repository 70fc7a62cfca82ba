//! Keypoint data model and the preprocessing pipeline: frame normalization,
//! per-part bounding-box normalization, part selection, batching, dataset
//! files and synthetic data.

mod batch;
mod io;
mod layout;
mod normalize;
mod select;
mod sequence;
mod synth;

pub use batch::{pad_batch, pad_inputs, Batch};
pub use io::{read_dataset, to_json_line, write_dataset};
pub use layout::{parse_parts, KeypointLayout, Part, NUM_KEYPOINTS};
pub use normalize::{
    frame_normalize, mode_groups, normalize_parts, normalize_parts_with_margin,
    part_bounding_box, BoundingBox, FrameNormalized, DEFAULT_MARGIN, DEGENERATE_EXTENT,
};
pub use select::select_components;
pub use sequence::{is_missing, NormState, NormalizationMode, Point, SkeletonSequence};
pub use synth::{
    generate_synthetic, JITTER_SIGMA, MAX_FRAMES, MIN_FRAMES, MISSING_RATE, SYNTH_HEIGHT,
    SYNTH_WIDTH,
};
