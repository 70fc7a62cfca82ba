//! JSON Lines dataset files, one sequence per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::KeypointLayout;
use super::sequence::{NormState, Point, SkeletonSequence};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default)]
    label: Option<usize>,
    #[serde(default)]
    gloss: Option<String>,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    state: String,
    frames: Vec<Vec<Point>>,
}

fn to_record(seq: &SkeletonSequence) -> Record {
    let (width, height) = match seq.frame_size() {
        Some((w, h)) => (Some(w), Some(h)),
        None => (None, None),
    };
    Record {
        id: seq.id.clone(),
        label: seq.label,
        gloss: seq.gloss.clone(),
        width,
        height,
        state: seq.state().to_string(),
        frames: seq.to_nested(),
    }
}

fn from_record(rec: Record, line: usize, admissible: &[usize]) -> Result<SkeletonSequence> {
    let state: NormState = rec.state.parse().map_err(|e: Error| Error::Record {
        line,
        detail: e.to_string(),
    })?;
    if rec.frames.is_empty() {
        return Err(Error::Schema(format!(
            "line {line}: record {} has no frames (need at least one)",
            rec.id
        )));
    }
    for (t, frame) in rec.frames.iter().enumerate() {
        if !admissible.contains(&frame.len()) {
            return Err(Error::Schema(format!(
                "line {line}: frame {t} of record {} has {} keypoints, expected {} \
                 (or a part selection of {:?})",
                rec.id,
                frame.len(),
                admissible.last().unwrap(),
                &admissible[..admissible.len() - 1]
            )));
        }
    }
    let frame_size = match (rec.width, rec.height) {
        (Some(w), Some(h)) => Some((w, h)),
        (None, None) => None,
        _ => {
            return Err(Error::Schema(format!(
                "line {line}: width and height must both be set or both null"
            )))
        }
    };
    let seq = SkeletonSequence::new(rec.id, rec.frames, state, frame_size).map_err(|e| match e {
        Error::Schema(detail) => Error::Schema(format!("line {line}: {detail}")),
        other => other,
    })?;
    Ok(seq.with_label(rec.label, rec.gloss))
}

/// Serializes one sequence as a single JSON line (no trailing newline).
pub fn to_json_line(seq: &SkeletonSequence) -> String {
    serde_json::to_string(&to_record(seq)).expect("records serialize")
}

pub fn write_dataset(seqs: &[SkeletonSequence], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for seq in seqs {
        out.write_all(to_json_line(seq).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a dataset. All records must share one state and one
/// keypoint count.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SkeletonSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let admissible = KeypointLayout::canonical().admissible_counts();
    let mut seqs: Vec<SkeletonSequence> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: line_no,
            detail: e.to_string(),
        })?;
        let seq = from_record(rec, line_no, &admissible)?;
        if let Some(first) = seqs.first() {
            if seq.state() != first.state() {
                return Err(Error::Schema(format!(
                    "line {line_no}: state {} differs from {} of earlier records",
                    seq.state(),
                    first.state()
                )));
            }
            if seq.num_keypoints() != first.num_keypoints() {
                return Err(Error::Schema(format!(
                    "line {line_no}: {} keypoints per frame, earlier records have {}",
                    seq.num_keypoints(),
                    first.num_keypoints()
                )));
            }
        }
        seqs.push(seq);
    }
    Ok(seqs)
}
