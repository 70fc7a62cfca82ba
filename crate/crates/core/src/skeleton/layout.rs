use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Keypoints per frame in a dataset record.
pub const NUM_KEYPOINTS: usize = 75;

/// A body part tracked by the pose extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Body,
    LeftHand,
    RightHand,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Body, Part::LeftHand, Part::RightHand];

    pub fn name(self) -> &'static str {
        match self {
            Part::Body => "body",
            Part::LeftHand => "left",
            Part::RightHand => "right",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "body" => Ok(Part::Body),
            "left" | "left_hand" | "lefthand" => Ok(Part::LeftHand),
            "right" | "right_hand" | "righthand" => Ok(Part::RightHand),
            other => Err(Error::Parameter(format!(
                "unknown part {other:?} (expected body, left or right)"
            ))),
        }
    }
}

/// Parses a comma-separated part list such as `body,left,right`.
pub fn parse_parts(list: &str) -> Result<Vec<Part>, Error> {
    let parts = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>, _>>()?;
    if parts.is_empty() {
        return Err(Error::Parameter("part list is empty".into()));
    }
    Ok(parts)
}

/// Where each part lives on the keypoint axis of a 75-point record.
///
/// The canonical layout stores the 6 selected pose landmarks first, then 21
/// left-hand and 21 right-hand landmarks. The trailing 27 slots hold the
/// remaining pose landmarks; they belong to no part, so selecting parts
/// drops them.
///
/// A reasonable choice for the six body points is nose, both shoulders,
/// both elbows and one hip (pose indices 0, 11, 12, 13, 14, 23); nothing in
/// the pipeline depends on which six they are.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointLayout {
    body: Range<usize>,
    left_hand: Range<usize>,
    right_hand: Range<usize>,
    total: usize,
}

impl Default for KeypointLayout {
    fn default() -> Self {
        Self::canonical()
    }
}

impl KeypointLayout {
    pub fn canonical() -> Self {
        KeypointLayout {
            body: 0..6,
            left_hand: 6..27,
            right_hand: 27..48,
            total: NUM_KEYPOINTS,
        }
    }

    pub fn span(&self, part: Part) -> Range<usize> {
        match part {
            Part::Body => self.body.clone(),
            Part::LeftHand => self.left_hand.clone(),
            Part::RightHand => self.right_hand.clone(),
        }
    }

    /// Keypoints per frame, including slots outside any part.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Slots not covered by any part.
    pub fn residual(&self) -> Range<usize> {
        self.right_hand.end..self.total
    }

    /// Keypoint count after keeping only `parts`.
    pub fn selected_len(&self, parts: &[Part]) -> usize {
        let mut parts = parts.to_vec();
        parts.sort();
        parts.dedup();
        parts.iter().map(|&p| self.span(p).len()).sum()
    }

    /// Keypoint counts a record may legally have: the full layout or any
    /// non-empty part selection.
    pub fn admissible_counts(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = (1u8..8)
            .map(|mask| {
                Part::ALL
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &p)| self.span(p).len())
                    .sum()
            })
            .collect();
        counts.push(self.total);
        counts.sort_unstable();
        counts.dedup();
        counts
    }
}
