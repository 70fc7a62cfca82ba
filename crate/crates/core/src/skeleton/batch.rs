use super::sequence::SkeletonSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Right-padded sequences split into separate x and y planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `B × T × K`, row-major.
    pub x_coords: Vec<f64>,
    /// `B × T × K`, row-major.
    pub y_coords: Vec<f64>,
    /// `B × T`; `true` for real frames.
    pub frame_mask: Vec<bool>,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Frame counts before truncation.
    pub original_lengths: Vec<usize>,
    pub batch_size: usize,
    pub max_frames: usize,
    pub num_keypoints: usize,
}

/// Pads labelled sequences to a common length, truncating any longer than
/// `max_len` to their first `max_len` frames.
pub fn pad_batch(seqs: &[&SkeletonSequence], max_len: Option<usize>) -> Result<Batch> {
    build(seqs, max_len, true)
}

/// As [`pad_batch`] but labels are optional; `labels` is left empty.
pub fn pad_inputs(seqs: &[&SkeletonSequence], max_len: Option<usize>) -> Result<Batch> {
    build(seqs, max_len, false)
}

fn build(seqs: &[&SkeletonSequence], max_len: Option<usize>, labelled: bool) -> Result<Batch> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Parameter("cannot batch zero sequences".into()))?;
    if max_len == Some(0) {
        return Err(Error::Parameter("max_len must be positive".into()));
    }
    let k = first.num_keypoints();
    for s in seqs {
        if s.num_keypoints() != k {
            return Err(Error::Contract(format!(
                "sequence {} has {} keypoints, {} has {k}",
                s.id,
                s.num_keypoints(),
                first.id
            )));
        }
        if s.state() != first.state() {
            return Err(Error::Contract(format!(
                "sequence {} is {}, {} is {}",
                s.id,
                s.state(),
                first.id,
                first.state()
            )));
        }
    }
    let labels = if labelled {
        seqs.iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::Contract(format!("sequence {} has no label", s.id)))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let original_lengths: Vec<usize> = seqs.iter().map(|s| s.num_frames()).collect();
    let lengths: Vec<usize> = original_lengths
        .iter()
        .map(|&n| max_len.map_or(n, |m| n.min(m)))
        .collect();
    let t_max = *lengths.iter().max().unwrap();
    let b = seqs.len();
    let mut x_coords = vec![0.0; b * t_max * k];
    let mut y_coords = vec![0.0; b * t_max * k];
    let mut frame_mask = vec![false; b * t_max];
    for (bi, (s, &len)) in seqs.iter().zip(&lengths).enumerate() {
        for t in 0..len {
            frame_mask[bi * t_max + t] = true;
            let base = (bi * t_max + t) * k;
            for (j, p) in s.frame(t).iter().enumerate() {
                x_coords[base + j] = p[0];
                y_coords[base + j] = p[1];
            }
        }
    }
    Ok(Batch {
        x_coords,
        y_coords,
        frame_mask,
        labels,
        lengths,
        original_lengths,
        batch_size: b,
        max_frames: t_max,
        num_keypoints: k,
    })
}

impl Batch {
    pub fn x_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64(self.dims(), &self.x_coords).expect("batch coordinates are finite")
    }

    pub fn y_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64(self.dims(), &self.y_coords).expect("batch coordinates are finite")
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        &self.frame_mask[b * self.max_frames..(b + 1) * self.max_frames]
    }

    fn dims(&self) -> Vec<usize> {
        vec![self.batch_size, self.max_frames, self.num_keypoints]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::sequence::NormState;

    fn seq(frames: usize, label: usize) -> SkeletonSequence {
        let f = (0..frames)
            .map(|t| vec![[0.1 + t as f64 * 0.01, 0.5]; 3])
            .collect();
        SkeletonSequence::new(format!("s{frames}"), f, NormState::FrameNormalized, None)
            .unwrap()
            .with_label(Some(label), None)
    }

    #[test]
    fn pads_to_longest() {
        let (a, b) = (seq(3, 0), seq(5, 1));
        let batch = pad_batch(&[&a, &b], None).unwrap();
        assert_eq!(batch.max_frames, 5);
        assert_eq!(batch.mask_row(0), &[true, true, true, false, false]);
        assert_eq!(batch.mask_row(1), &[true; 5]);
        assert_eq!(batch.labels, vec![0, 1]);
        // padded frames of the first sequence are zero in both planes
        let k = 3;
        assert!(batch.x_coords[3 * k..5 * k].iter().all(|&v| v == 0.0));
        assert!(batch.y_coords[3 * k..5 * k].iter().all(|&v| v == 0.0));
        assert_eq!(batch.x_coords[k], 0.11);
        assert_eq!(batch.y_coords[k], 0.5);
    }

    #[test]
    fn single_sequence_has_no_padding() {
        let a = seq(4, 2);
        let batch = pad_batch(&[&a], None).unwrap();
        assert!(batch.frame_mask.iter().all(|&m| m));
        assert_eq!(batch.lengths, vec![4]);
    }

    #[test]
    fn truncates_to_max_len() {
        let a = seq(6, 0);
        let batch = pad_batch(&[&a], Some(4)).unwrap();
        assert_eq!(batch.max_frames, 4);
        assert_eq!(batch.mask_row(0), &[true; 4]);
        assert_eq!(batch.original_lengths, vec![6]);
    }

    #[test]
    fn mixed_keypoint_counts_rejected() {
        let a = seq(2, 0);
        let b = SkeletonSequence::new("b", vec![vec![[0.1, 0.1]; 4]], NormState::FrameNormalized, None)
            .unwrap()
            .with_label(Some(0), None);
        assert_eq!(pad_batch(&[&a, &b], None).unwrap_err().kind(), "contract");
    }

    #[test]
    fn labels_required() {
        let a = seq(2, 0).with_label(None, None);
        assert!(pad_batch(&[&a], None).is_err());
        assert!(pad_inputs(&[&a], None).is_ok());
    }
}
