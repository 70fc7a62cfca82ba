use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Per-part bounding-box normalization variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormalizationMode {
    /// Coordinates stay frame-normalized.
    None,
    /// One box over body and both hands.
    OneBox,
    /// Body in one box, both hands together in another.
    TwoBox,
    /// Body, left hand and right hand each in their own box.
    ThreeBox,
}

impl NormalizationMode {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationMode::None => "none",
            NormalizationMode::OneBox => "one-box",
            NormalizationMode::TwoBox => "two-box",
            NormalizationMode::ThreeBox => "three-box",
        }
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormalizationMode::None),
            "one-box" => Ok(NormalizationMode::OneBox),
            "two-box" => Ok(NormalizationMode::TwoBox),
            "three-box" => Ok(NormalizationMode::ThreeBox),
            other => Err(Error::Parameter(format!(
                "unknown normalization mode {other:?} (expected none, one-box, two-box or three-box)"
            ))),
        }
    }
}

/// Which coordinate system a sequence is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormState {
    RawPixels,
    FrameNormalized,
    PartNormalized(NormalizationMode),
}

impl fmt::Display for NormState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormState::RawPixels => f.write_str("raw-pixels"),
            NormState::FrameNormalized => f.write_str("frame-normalized"),
            NormState::PartNormalized(mode) => write!(f, "part-normalized:{mode}"),
        }
    }
}

impl FromStr for NormState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw-pixels" => Ok(NormState::RawPixels),
            "frame-normalized" => Ok(NormState::FrameNormalized),
            _ => match s.strip_prefix("part-normalized:") {
                Some(mode) => Ok(NormState::PartNormalized(mode.parse()?)),
                None => Err(Error::Schema(format!("unknown state {s:?}"))),
            },
        }
    }
}

/// Keypoint coordinates `(x, y)`. `(0, 0)` marks a missing keypoint.
pub type Point = [f64; 2];

pub fn is_missing(p: Point) -> bool {
    p[0] == 0.0 && p[1] == 0.0
}

/// One signing clip: `T` frames of `K` keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    points: Vec<Point>,
    num_frames: usize,
    num_keypoints: usize,
    frame_size: Option<(u32, u32)>,
    state: NormState,
    pub label: Option<usize>,
    pub gloss: Option<String>,
}

impl SkeletonSequence {
    /// Validates and builds a sequence.
    ///
    /// Raw-pixel sequences must carry their frame size; normalized ones must
    /// not, and all their coordinates must lie in `[0, 1]`.
    pub fn new(
        id: impl Into<String>,
        frames: Vec<Vec<Point>>,
        state: NormState,
        frame_size: Option<(u32, u32)>,
    ) -> Result<Self> {
        let num_frames = frames.len();
        if num_frames == 0 {
            return Err(Error::Schema("a sequence needs at least one frame".into()));
        }
        let num_keypoints = frames[0].len();
        if num_keypoints == 0 {
            return Err(Error::Schema("frames must contain keypoints".into()));
        }
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != num_keypoints) {
            return Err(Error::Schema(format!(
                "frame {t} has {} keypoints, frame 0 has {num_keypoints}",
                f.len()
            )));
        }
        let points: Vec<Point> = frames.into_iter().flatten().collect();
        Self::from_points(id, points, num_frames, num_keypoints, state, frame_size)
    }

    pub(crate) fn from_points(
        id: impl Into<String>,
        points: Vec<Point>,
        num_frames: usize,
        num_keypoints: usize,
        state: NormState,
        frame_size: Option<(u32, u32)>,
    ) -> Result<Self> {
        debug_assert_eq!(points.len(), num_frames * num_keypoints);
        if num_frames == 0 {
            return Err(Error::Schema("a sequence needs at least one frame".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema("coordinates must be finite".into()));
        }
        match (state, frame_size) {
            (NormState::RawPixels, None) => {
                return Err(Error::Schema(
                    "raw-pixel sequences need width and height".into(),
                ))
            }
            (NormState::RawPixels, Some((w, h))) if w == 0 || h == 0 => {
                return Err(Error::Schema(format!("frame size {w}x{h} must be positive")))
            }
            (NormState::RawPixels, _) => {}
            (_, Some(_)) => {
                return Err(Error::Schema(format!(
                    "frame size is only recorded for raw-pixel sequences, state is {state}"
                )))
            }
            (_, None) => {
                if let Some(p) = points.iter().find(|p| p.iter().any(|v| !(0.0..=1.0).contains(v))) {
                    return Err(Error::Schema(format!(
                        "normalized coordinate {p:?} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(SkeletonSequence {
            id: id.into(),
            points,
            num_frames,
            num_keypoints,
            frame_size,
            state,
            label: None,
            gloss: None,
        })
    }

    pub fn with_label(mut self, label: Option<usize>, gloss: Option<String>) -> Self {
        self.label = label;
        self.gloss = gloss;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }

    pub fn state(&self) -> NormState {
        self.state
    }

    pub fn frame_size(&self) -> Option<(u32, u32)> {
        self.frame_size
    }

    pub fn point(&self, frame: usize, keypoint: usize) -> Point {
        self.points[frame * self.num_keypoints + keypoint]
    }

    pub fn frame(&self, frame: usize) -> &[Point] {
        &self.points[frame * self.num_keypoints..(frame + 1) * self.num_keypoints]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Point]> {
        self.points.chunks(self.num_keypoints)
    }

    /// All points, frame-major.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn to_nested(&self) -> Vec<Vec<Point>> {
        self.frames().map(<[Point]>::to_vec).collect()
    }

    /// Same metadata, new coordinates and state.
    pub(crate) fn rebuild(
        &self,
        points: Vec<Point>,
        num_frames: usize,
        num_keypoints: usize,
        state: NormState,
        frame_size: Option<(u32, u32)>,
    ) -> Result<Self> {
        Ok(
            Self::from_points(self.id.clone(), points, num_frames, num_keypoints, state, frame_size)?
                .with_label(self.label, self.gloss.clone()),
        )
    }
}
