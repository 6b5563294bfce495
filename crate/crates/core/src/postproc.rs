//! Frame selection, silence holds and seam smoothing.
//!
//! All of this runs in normalized space, before denormalization, so the seam
//! geometry does not depend on the active [`NormSpec`](crate::ema::NormSpec).

use thiserror::Error;

use crate::ema::{EmaFrame, Space, EMA_DIM, FRAME_RATE};
use crate::inversion::InversionResponse;

/// Frames published per 0.1 s batch.
pub const FRAMES_PER_BATCH: usize = 10;
/// Leading frames of a batch replaced by the seam curve.
pub const SEAM_FRAMES: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("inversion returned {got} frames, expected {expected}")]
pub struct FrameCountMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Window-local frame range covering the working batch: `[100n − 20, 100n − 10)`.
pub fn working_frame_range(n_seconds: u32) -> std::ops::Range<usize> {
    let total = FRAME_RATE as usize * n_seconds as usize;
    total - 2 * FRAMES_PER_BATCH..total - FRAMES_PER_BATCH
}

/// Keeps only the ten frames that belong to the working batch, dropping the
/// context frames before it and the lookahead frames after it.
pub fn select_working_frames(
    resp: &InversionResponse,
    n_seconds: u32,
) -> Result<[EmaFrame; FRAMES_PER_BATCH], FrameCountMismatch> {
    let expected = FRAME_RATE as usize * n_seconds as usize;
    if resp.frames.len() != expected {
        return Err(FrameCountMismatch {
            expected,
            got: resp.frames.len(),
        });
    }
    let range = working_frame_range(n_seconds);
    Ok(std::array::from_fn(|i| resp.frames[range.start + i]))
}

/// Cubic Bézier in Bernstein form.
pub fn cubic_bezier(p: [f64; 4], t: f64) -> f64 {
    let u = 1.0 - t;
    u * u * u * p[0] + 3.0 * u * u * t * p[1] + 3.0 * u * t * t * p[2] + t * t * t * p[3]
}

/// Control points for one dimension of the seam. The curve leaves the last
/// published value along the previous slope and lands on `current[3]` along
/// the slope into `current[4]`.
pub fn seam_control_points(second_last: Option<f64>, last: f64, c3: f64, c4: f64) -> [f64; 4] {
    let delta = second_last.map_or(0.0, |s| last - s);
    [last, last + delta / 3.0, c3 - (c4 - c3) / 3.0, c3]
}

/// The last two published frames, oldest first.
pub type Tail = (Option<EmaFrame>, EmaFrame);

/// Replaces frames 0..4 of `current` with the Bézier seam from the previous
/// batch's tail, sampled at t = 0.25, 0.5, 0.75, 1.0. Frames 4..10 and all
/// metadata are untouched; with no tail the batch passes through as-is.
///
/// Tangent control points can leave `[-1, 1]`, so curve samples are clamped
/// back into the normalized range. Both curve endpoints are inside it, so
/// clamping never moves a sample out of the control hull.
pub fn smooth_seam(prev_tail: Option<Tail>, current: &[EmaFrame; FRAMES_PER_BATCH]) -> [EmaFrame; FRAMES_PER_BATCH] {
    let mut out = *current;
    let Some((second_last, last)) = prev_tail else {
        return out;
    };
    for d in 0..EMA_DIM {
        let p = seam_control_points(
            second_last.map(|f| f.values[d]),
            last.values[d],
            current[3].values[d],
            current[4].values[d],
        );
        for (i, frame) in out.iter_mut().take(SEAM_FRAMES).enumerate() {
            frame.values[d] =
                cubic_bezier(p, (i + 1) as f64 / SEAM_FRAMES as f64).clamp(-1.0, 1.0);
        }
    }
    out
}

/// Sequential post-processing stage: remembers the last two published frames
/// and hands out gap-free sequence numbers.
#[derive(Debug, Clone)]
pub struct PostProcessor {
    rest_pose: [f64; EMA_DIM],
    smoothing: bool,
    tail: Option<Tail>,
    next_seq: u64,
}

impl PostProcessor {
    pub fn new(rest_pose: [f64; EMA_DIM], smoothing: bool) -> Self {
        Self {
            rest_pose,
            smoothing,
            tail: None,
            next_seq: 0,
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn last_frame(&self) -> Option<&EmaFrame> {
        self.tail.as_ref().map(|(_, last)| last)
    }

    /// Ten copies of the last published frame (or the rest pose before any
    /// output), marked as non-speech.
    pub fn silence_hold(&mut self) -> [EmaFrame; FRAMES_PER_BATCH] {
        let values = self.last_frame().map_or(self.rest_pose, |f| f.values);
        let frames = std::array::from_fn(|_| EmaFrame::new(0, values, Space::Normalized, false));
        self.publish(frames)
    }

    /// Smooths (if enabled) and numbers a batch of selected speech frames.
    pub fn speech(&mut self, selected: &[EmaFrame; FRAMES_PER_BATCH]) -> [EmaFrame; FRAMES_PER_BATCH] {
        let frames = if self.smoothing {
            smooth_seam(self.tail, selected)
        } else {
            *selected
        };
        self.publish(frames)
    }

    fn publish(&mut self, mut frames: [EmaFrame; FRAMES_PER_BATCH]) -> [EmaFrame; FRAMES_PER_BATCH] {
        for f in frames.iter_mut() {
            f.seq = self.next_seq;
            f.space = Space::Normalized;
            self.next_seq += 1;
        }
        self.tail = Some((Some(frames[FRAMES_PER_BATCH - 2]), frames[FRAMES_PER_BATCH - 1]));
        frames
    }
}
