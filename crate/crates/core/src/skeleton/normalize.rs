use super::layout::{KeypointLayout, Part};
use super::sequence::{is_missing, NormState, NormalizationMode, Point, SkeletonSequence};
use crate::error::{Error, Result};

/// Default margin around each part box, as a fraction of its extent.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// Half-width given to a box axis with zero extent.
pub const DEGENERATE_EXTENT: f64 = 1e-6;

/// Axis-aligned box in frame-normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    /// Maps `p` into the box's unit square.
    pub fn normalize(&self, p: Point) -> Point {
        [
            (p[0] - self.x_min) / (self.x_max - self.x_min),
            (p[1] - self.y_min) / (self.y_max - self.y_min),
        ]
    }
}

/// Result of [`frame_normalize`].
#[derive(Debug, Clone)]
pub struct FrameNormalized {
    pub sequence: SkeletonSequence,
    /// How many coordinates fell outside the frame and were clamped.
    pub clamped: usize,
}

/// Divides x by the frame width and y by the frame height. Missing keypoints
/// stay `(0, 0)`; coordinates outside the frame are clamped onto it.
pub fn frame_normalize(seq: &SkeletonSequence) -> Result<FrameNormalized> {
    if seq.state() != NormState::RawPixels {
        return Err(Error::State(format!(
            "frame normalization needs raw-pixels input, got {}",
            seq.state()
        )));
    }
    let (w, h) = seq.frame_size().expect("raw sequences carry a frame size");
    let (w, h) = (f64::from(w), f64::from(h));
    let mut clamped = 0;
    let points = seq
        .points()
        .iter()
        .map(|&p| {
            if is_missing(p) {
                return p;
            }
            let mut q = [p[0] / w, p[1] / h];
            for v in &mut q {
                if !(0.0..=1.0).contains(v) {
                    clamped += 1;
                    *v = v.clamp(0.0, 1.0);
                }
            }
            q
        })
        .collect();
    let sequence = seq.rebuild(
        points,
        seq.num_frames(),
        seq.num_keypoints(),
        NormState::FrameNormalized,
        None,
    )?;
    Ok(FrameNormalized { sequence, clamped })
}

/// Tight box around `points`, grown by `margin_frac` of its width on the left
/// and right and `margin_frac` of its height on top and bottom. An axis with
/// zero extent is widened by [`DEGENERATE_EXTENT`] each way.
///
/// Returns `None` for an empty point set (the part is absent).
pub fn part_bounding_box<I>(points: I, margin_frac: f64) -> Option<BoundingBox>
where
    I: IntoIterator<Item = Point>,
{
    let mut iter = points.into_iter();
    let first = iter.next()?;
    let mut b = BoundingBox {
        x_min: first[0],
        y_min: first[1],
        x_max: first[0],
        y_max: first[1],
    };
    for p in iter {
        b.x_min = b.x_min.min(p[0]);
        b.y_min = b.y_min.min(p[1]);
        b.x_max = b.x_max.max(p[0]);
        b.y_max = b.y_max.max(p[1]);
    }
    let (mx, my) = ((b.x_max - b.x_min) * margin_frac, (b.y_max - b.y_min) * margin_frac);
    b.x_min -= mx;
    b.x_max += mx;
    b.y_min -= my;
    b.y_max += my;
    if b.x_max <= b.x_min {
        b.x_min -= DEGENERATE_EXTENT;
        b.x_max += DEGENERATE_EXTENT;
    }
    if b.y_max <= b.y_min {
        b.y_min -= DEGENERATE_EXTENT;
        b.y_max += DEGENERATE_EXTENT;
    }
    Some(b)
}

fn tight_extent<I: Iterator<Item = Point>>(mut points: I) -> Option<(Point, Point)> {
    let first = points.next()?;
    Some(points.fold((first, first), |(lo, hi), p| {
        ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
    }))
}

/// One axis of a margin box, evaluated as `(v - min + pad) / (extent + 2 pad)`.
///
/// Same map as [`BoundingBox::normalize`] on the box from
/// [`part_bounding_box`], but offsets are taken from the tight minimum so the
/// result does not depend on where the group sits in the frame: shifting a
/// group, or scaling it by a power of two, gives bit-identical output.
struct AxisMap {
    min: f64,
    pad: f64,
    span: f64,
}

impl AxisMap {
    fn new(min: f64, max: f64, margin_frac: f64) -> Self {
        let extent = max - min;
        let pad = extent * margin_frac;
        let span = extent + 2.0 * pad;
        if span > 0.0 {
            AxisMap { min, pad, span }
        } else {
            AxisMap {
                min,
                pad: DEGENERATE_EXTENT,
                span: 2.0 * DEGENERATE_EXTENT,
            }
        }
    }

    fn apply(&self, v: f64) -> f64 {
        ((v - self.min + self.pad) / self.span).clamp(0.0, 1.0)
    }
}

/// Part groups that share one box under `mode`.
pub fn mode_groups(mode: NormalizationMode) -> Vec<Vec<Part>> {
    use Part::*;
    match mode {
        NormalizationMode::None => vec![],
        NormalizationMode::OneBox => vec![vec![Body, LeftHand, RightHand]],
        NormalizationMode::TwoBox => vec![vec![Body], vec![LeftHand, RightHand]],
        NormalizationMode::ThreeBox => vec![vec![Body], vec![LeftHand], vec![RightHand]],
    }
}

/// Min-max normalizes every part group inside its own margin box.
///
/// Each group's box spans all frames of the sequence. Missing keypoints stay
/// `(0, 0)`, a group with no visible keypoint anywhere is left untouched, and
/// slots outside every part keep their frame-normalized values.
pub fn normalize_parts(
    seq: &SkeletonSequence,
    layout: &KeypointLayout,
    mode: NormalizationMode,
) -> Result<SkeletonSequence> {
    normalize_parts_with_margin(seq, layout, mode, DEFAULT_MARGIN)
}

pub fn normalize_parts_with_margin(
    seq: &SkeletonSequence,
    layout: &KeypointLayout,
    mode: NormalizationMode,
    margin_frac: f64,
) -> Result<SkeletonSequence> {
    if seq.state() != NormState::FrameNormalized {
        return Err(Error::State(format!(
            "part normalization needs frame-normalized input, got {}",
            seq.state()
        )));
    }
    if seq.num_keypoints() != layout.total() {
        return Err(Error::dim(
            "normalize_parts",
            format!(
                "layout expects {} keypoints, sequence has {}",
                layout.total(),
                seq.num_keypoints()
            ),
        ));
    }
    let k = seq.num_keypoints();
    let mut points = seq.points().to_vec();
    for group in mode_groups(mode) {
        let indices: Vec<usize> = group.iter().flat_map(|&p| layout.span(p)).collect();
        let visible = (0..seq.num_frames())
            .flat_map(|t| indices.iter().map(move |&i| seq.point(t, i)))
            .filter(|&p| !is_missing(p));
        let Some((lo, hi)) = tight_extent(visible) else {
            continue;
        };
        let axes = [
            AxisMap::new(lo[0], hi[0], margin_frac),
            AxisMap::new(lo[1], hi[1], margin_frac),
        ];
        for t in 0..seq.num_frames() {
            for &i in &indices {
                let p = &mut points[t * k + i];
                if !is_missing(*p) {
                    *p = [axes[0].apply(p[0]), axes[1].apply(p[1])];
                }
            }
        }
    }
    seq.rebuild(
        points,
        seq.num_frames(),
        k,
        NormState::PartNormalized(mode),
        None,
    )
}
