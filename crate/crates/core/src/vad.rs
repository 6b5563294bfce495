//! Per-batch speech gate: a deterministic energy detector with hangover.
//!
//! Each 1600-sample batch is split into ten 160-sample sub-frames. A sub-frame
//! is active when its RMS level in dBFS reaches the threshold; the batch is
//! raw-speech when at least `min_active_frames` sub-frames are active. The
//! final decision also stays true for `hangover_batches` batches after the
//! last raw-speech batch so word-final consonants are not clipped.
//!
//! The defaults are a stand-in for an external detector's aggressiveness
//! setting, not a calibrated match of it.

use thiserror::Error;

use crate::audio::BATCH_SAMPLES;

pub const SUBFRAME_SAMPLES: usize = 160;
pub const SUBFRAMES_PER_BATCH: usize = BATCH_SAMPLES / SUBFRAME_SAMPLES;

#[derive(Debug, Error, PartialEq)]
pub enum VadConfigError {
    #[error("threshold must be below 0 dBFS, got {0}")]
    Threshold(f64),
    #[error("min_active_frames must be in 0..=10, got {0}")]
    MinActive(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    pub threshold_dbfs: f64,
    pub min_active_frames: usize,
    pub hangover_batches: u32,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            threshold_dbfs: -40.0,
            min_active_frames: 3,
            hangover_batches: 3,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<(), VadConfigError> {
        if !(self.threshold_dbfs < 0.0) {
            return Err(VadConfigError::Threshold(self.threshold_dbfs));
        }
        if self.min_active_frames > SUBFRAMES_PER_BATCH {
            return Err(VadConfigError::MinActive(self.min_active_frames));
        }
        Ok(())
    }
}

/// Hangover bookkeeping carried between batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VadState {
    /// Batches since the last raw-speech batch; `None` before any speech.
    since_speech: Option<u32>,
}

/// RMS level of a slice in dBFS (full scale = 1.0). Silence is `-inf`.
pub fn rms_dbfs(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mean_sq = samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64;
    10.0 * mean_sq.log10()
}

/// Pure decision function: same inputs always give the same output.
pub fn is_speech(batch: &[f32], config: &VadConfig, state: VadState) -> (bool, VadState) {
    debug_assert_eq!(batch.len(), BATCH_SAMPLES);
    let active = batch
        .chunks(SUBFRAME_SAMPLES)
        .filter(|sub| rms_dbfs(sub) >= config.threshold_dbfs)
        .count();
    if active >= config.min_active_frames {
        return (true, VadState { since_speech: Some(0) });
    }
    match state.since_speech {
        Some(k) if k < config.hangover_batches => (
            true,
            VadState {
                since_speech: Some(k + 1),
            },
        ),
        Some(k) => (
            false,
            VadState {
                since_speech: Some(k.saturating_add(1)),
            },
        ),
        None => (false, state),
    }
}

/// Swappable speech gate so an external detector can replace the energy one.
pub trait VoiceDetector: Send {
    fn is_speech(&mut self, batch: &[f32]) -> bool;
}

/// [`is_speech`] bundled with its state.
#[derive(Debug, Clone, Default)]
pub struct EnergyVad {
    pub config: VadConfig,
    state: VadState,
}

impl EnergyVad {
    pub fn new(config: VadConfig) -> Result<Self, VadConfigError> {
        config.validate()?;
        Ok(Self {
            config,
            state: VadState::default(),
        })
    }
}

impl VoiceDetector for EnergyVad {
    fn is_speech(&mut self, batch: &[f32]) -> bool {
        let (decision, next) = is_speech(batch, &self.config, self.state);
        self.state = next;
        decision
    }
}

/// Gate used with `--vad off`: everything is speech.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysSpeech;

impl VoiceDetector for AlwaysSpeech {
    fn is_speech(&mut self, _batch: &[f32]) -> bool {
        true
    }
}
