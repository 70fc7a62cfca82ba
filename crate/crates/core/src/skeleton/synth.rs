//! Synthetic signing clips with class-specific hand motion.
//!
//! Each class moves the right wrist along its own Lissajous figure, with a
//! class-specific finger spread and curl and a smaller left-hand loop. Every
//! sample varies signer position, scale, speed, length and noise, so the
//! classes stay separable but not trivially identical.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layout::{KeypointLayout, Part, NUM_KEYPOINTS};
use super::sequence::{NormState, Point, SkeletonSequence};
use crate::error::{Error, Result};

pub const SYNTH_WIDTH: u32 = 640;
pub const SYNTH_HEIGHT: u32 = 480;
pub const MIN_FRAMES: usize = 16;
pub const MAX_FRAMES: usize = 48;
/// Standard deviation of per-keypoint noise, in frame units.
pub const JITTER_SIGMA: f64 = 0.01;
pub const MISSING_RATE: f64 = 0.05;

struct ClassMotion {
    freq_x: f64,
    freq_y: f64,
    phase: f64,
    spread: f64,
    curl: f64,
    orientation: f64,
    left_radius: f64,
    left_phase: f64,
    left_spread: f64,
    left_orientation: f64,
    elbow_drop: f64,
}

impl ClassMotion {
    fn for_class(class: usize, classes: usize) -> Self {
        let frac = class as f64 / (classes - 1) as f64;
        ClassMotion {
            freq_x: 1.0 + 0.5 * (class % 3) as f64,
            freq_y: 1.0 + 0.5 * ((class / 3) % 3) as f64,
            phase: TAU * class as f64 / classes as f64,
            spread: 0.12 + 0.3 * frac,
            curl: 0.5 * ((class % 4) as f64 / 3.0) - 0.25,
            orientation: 2.0 * (class as f64 * 0.618_034).fract() - 1.0,
            left_radius: 0.03 + 0.03 * (class % 2) as f64,
            left_phase: TAU * class as f64 / classes as f64,
            left_spread: 0.1 + 0.3 * (class as f64 * 0.754_878).fract(),
            left_orientation: 2.0 * (class as f64 * 0.381_966 + 0.5).fract() - 1.0,
            elbow_drop: 0.02 + 0.08 * (class as f64 * 0.569_840 + 0.25).fract(),
        }
    }
}

/// `classes × samples_per_class` raw-pixel sequences, class-major, fully
/// determined by `seed`.
pub fn generate_synthetic(
    classes: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<Vec<SkeletonSequence>> {
    if classes < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if samples_per_class == 0 {
        return Err(Error::Parameter("samples per class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes * samples_per_class);
    for class in 0..classes {
        let motion = ClassMotion::for_class(class, classes);
        for i in 0..samples_per_class {
            let frames = sample_frames(&motion, &mut rng);
            let seq = SkeletonSequence::new(
                format!("synth-{seed}-{class:03}-{i:03}"),
                frames,
                NormState::RawPixels,
                Some((SYNTH_WIDTH, SYNTH_HEIGHT)),
            )?
            .with_label(Some(class), Some(format!("SIGN_{class:02}")));
            out.push(seq);
        }
    }
    Ok(out)
}

fn hand(wrist: Point, spread: f64, curl: f64, rotation: f64, scale: f64, mirror: f64) -> Vec<Point> {
    let mut pts = Vec::with_capacity(21);
    pts.push(wrist);
    for finger in 0..5 {
        let base = -PI / 2.0 + rotation + mirror * (finger as f64 - 2.0) * spread;
        for joint in 0..4 {
            let angle = base + mirror * curl * joint as f64;
            let reach = 0.03 * scale * (joint + 1) as f64 * if finger == 0 { 0.8 } else { 1.0 };
            pts.push([wrist[0] + reach * angle.cos(), wrist[1] + reach * angle.sin()]);
        }
    }
    pts
}

fn sample_frames(m: &ClassMotion, rng: &mut ChaCha8Rng) -> Vec<Vec<Point>> {
    let layout = KeypointLayout::canonical();
    let noise = Normal::new(0.0, JITTER_SIGMA).expect("valid sigma");
    let t_len = rng.random_range(MIN_FRAMES..=MAX_FRAMES);
    let offset = [rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)];
    let scale = rng.random_range(0.9..1.1);
    let amp = [0.10 * rng.random_range(0.9..1.1), 0.08 * rng.random_range(0.9..1.1)];
    let phase = m.phase + rng.random_range(-0.1..0.1);
    let speed = rng.random_range(0.97..1.03);

    let place = |p: Point| [0.5 + scale * (p[0] - 0.5) + offset[0], 0.5 + scale * (p[1] - 0.5) + offset[1]];

    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let s = speed * t as f64 / (t_len - 1) as f64;
        let right_wrist = [
            0.38 + amp[0] * (TAU * m.freq_x * s + phase).cos(),
            0.55 + amp[1] * (TAU * m.freq_y * s + phase).sin(),
        ];
        let left_wrist = [
            0.62 + m.left_radius * (TAU * s + m.left_phase).cos(),
            0.60 + m.left_radius * (TAU * s + m.left_phase).sin(),
        ];
        let (l_shoulder, r_shoulder) = ([0.58, 0.38], [0.42, 0.38]);
        let elbow = |shoulder: Point, wrist: Point| {
            [(shoulder[0] + wrist[0]) / 2.0, (shoulder[1] + wrist[1]) / 2.0 + m.elbow_drop]
        };
        let rotation = m.orientation + 0.15 * (TAU * s + phase).sin();

        let mut frame = vec![[0.0, 0.0]; NUM_KEYPOINTS];
        let body = [
            [0.5, 0.22],
            l_shoulder,
            r_shoulder,
            elbow(l_shoulder, left_wrist),
            elbow(r_shoulder, right_wrist),
            [0.55, 0.8],
        ];
        frame[layout.span(Part::Body)].copy_from_slice(&body);
        frame[layout.span(Part::LeftHand)]
            .copy_from_slice(&hand(left_wrist, m.left_spread, 0.1, m.left_orientation - 0.15 * (TAU * s + phase).sin(), 1.0, -1.0));
        frame[layout.span(Part::RightHand)]
            .copy_from_slice(&hand(right_wrist, m.spread, m.curl, rotation, 1.0, 1.0));
        for (i, slot) in layout.residual().enumerate() {
            frame[slot] = [0.3 + 0.4 * (i % 9) as f64 / 8.0, 0.84 + 0.05 * (i / 9) as f64];
        }

        for p in &mut frame {
            let q = place(*p);
            *p = if rng.random::<f64>() < MISSING_RATE {
                [0.0, 0.0]
            } else {
                [
                    (q[0] + noise.sample(rng)).clamp(1e-3, 1.0) * f64::from(SYNTH_WIDTH),
                    (q[1] + noise.sample(rng)).clamp(1e-3, 1.0) * f64::from(SYNTH_HEIGHT),
                ]
            };
        }
        frames.push(frame);
    }
    frames
}
