use super::layout::{KeypointLayout, Part};
use super::sequence::SkeletonSequence;
use crate::error::{Error, Result};

/// Keeps only the keypoints of `parts`, in body, left hand, right hand order.
pub fn select_components(
    seq: &SkeletonSequence,
    layout: &KeypointLayout,
    parts: &[Part],
) -> Result<SkeletonSequence> {
    if parts.is_empty() {
        return Err(Error::Parameter("select at least one part".into()));
    }
    if seq.num_keypoints() != layout.total() {
        return Err(Error::dim(
            "select_components",
            format!(
                "layout expects {} keypoints, sequence has {}",
                layout.total(),
                seq.num_keypoints()
            ),
        ));
    }
    let mut parts = parts.to_vec();
    parts.sort();
    parts.dedup();
    let indices: Vec<usize> = parts.iter().flat_map(|&p| layout.span(p)).collect();
    let points = seq
        .frames()
        .flat_map(|frame| indices.iter().map(move |&i| frame[i]))
        .collect();
    seq.rebuild(
        points,
        seq.num_frames(),
        indices.len(),
        seq.state(),
        seq.frame_size(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::sequence::NormState;

    fn indexed() -> SkeletonSequence {
        let frames = (0..2)
            .map(|t| {
                (0..75)
                    .map(|k| [k as f64 / 100.0, t as f64 / 10.0 + 0.05])
                    .collect()
            })
            .collect();
        SkeletonSequence::new("s", frames, NormState::FrameNormalized, None).unwrap()
    }

    #[test]
    fn right_hand_slice() {
        let s = indexed();
        let l = KeypointLayout::canonical();
        let r = select_components(&s, &l, &[Part::RightHand]).unwrap();
        assert_eq!(r.num_keypoints(), 21);
        for t in 0..2 {
            assert_eq!(r.frame(t), &s.frame(t)[27..48]);
        }
    }

    #[test]
    fn body_and_left_concatenate_in_order() {
        let s = indexed();
        let l = KeypointLayout::canonical();
        let r = select_components(&s, &l, &[Part::LeftHand, Part::Body]).unwrap();
        assert_eq!(r.num_keypoints(), 27);
        assert_eq!(r.frame(1), &s.frame(1)[0..27]);
    }

    #[test]
    fn all_parts_keep_every_part_keypoint() {
        let s = indexed();
        let l = KeypointLayout::canonical();
        let r = select_components(&s, &l, &Part::ALL).unwrap();
        assert_eq!(r.num_keypoints(), 48);
        assert_eq!(r.frame(0), &s.frame(0)[..48]);
        assert_eq!(r.state(), s.state());
    }

    #[test]
    fn empty_selection_is_rejected() {
        let err = select_components(&indexed(), &KeypointLayout::canonical(), &[]).unwrap_err();
        assert_eq!(err.kind(), "parameter");
    }
}
