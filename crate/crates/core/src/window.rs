//! Rolling context window.
//!
//! For every working batch the inverter sees `16000·n` samples laid out as
//!
//! ```text
//! [ context prefix: 16000·n − 3200 ][ working: 1600 ][ lookahead: 1600 ]
//! ```
//!
//! The prefix is the newest real history before the working batch. While
//! less history than that exists, the deficit is covered by artificial
//! context placed on the oldest side, so real audio always sits next to the
//! working batch. Window `k` can only be built once batch `k + 1` has
//! arrived, which is the pipeline's intentional one-batch delay.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::audio::{self, AudioBatch, BATCH_SAMPLES, SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("batch {got} arrived out of order (expected {expected})")]
    OutOfOrderBatch { expected: u64, got: u64 },
    #[error("context file {path}: {reason}")]
    BadContextFile { path: PathBuf, reason: String },
    #[error("window length must be a positive whole number of seconds")]
    BadWindowLength,
}

/// Source of artificial context used until enough real history exists.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextStrategy {
    /// No artificial context: windows with a deficit are not inverted at all
    /// and the pipeline holds its pose instead.
    None,
    Silence,
    /// Recording of a sustained vowel, 16 kHz mono.
    Vowel(Arc<Vec<f32>>),
    /// Recording of a full utterance, 16 kHz mono.
    Utterance(Arc<Vec<f32>>),
    /// What has been heard so far, looped.
    LoopedBuffer,
}

impl ContextStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ContextStrategy::None => "none",
            ContextStrategy::Silence => "silence",
            ContextStrategy::Vowel(_) => "vowel",
            ContextStrategy::Utterance(_) => "utterance",
            ContextStrategy::LoopedBuffer => "loop",
        }
    }

    /// Loads a context recording, resampling to 16 kHz when needed.
    pub fn load_recording(path: impl AsRef<Path>) -> Result<Arc<Vec<f32>>, WindowError> {
        let path = path.as_ref();
        let samples = audio::decode_wav(path).map_err(|e| WindowError::BadContextFile {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        if samples.is_empty() {
            return Err(WindowError::BadContextFile {
                path: path.to_owned(),
                reason: "recording is empty".into(),
            });
        }
        Ok(Arc::new(samples))
    }
}

/// The strategy names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextKind {
    None,
    Silence,
    Vowel,
    Utterance,
    Loop,
}

impl ContextKind {
    pub const ALL: [ContextKind; 5] = [
        ContextKind::None,
        ContextKind::Silence,
        ContextKind::Vowel,
        ContextKind::Utterance,
        ContextKind::Loop,
    ];

    pub fn needs_file(self) -> bool {
        matches!(self, ContextKind::Vowel | ContextKind::Utterance)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::None => "none",
            ContextKind::Silence => "silence",
            ContextKind::Vowel => "vowel",
            ContextKind::Utterance => "utterance",
            ContextKind::Loop => "loop",
        }
    }

    /// Builds the strategy, loading `file` for the recording-backed kinds.
    pub fn resolve(self, file: Option<&Path>) -> Result<ContextStrategy, WindowError> {
        let load = |f: Option<&Path>| -> Result<Arc<Vec<f32>>, WindowError> {
            let f = f.ok_or_else(|| WindowError::BadContextFile {
                path: PathBuf::new(),
                reason: format!("context '{}' needs a recording", self.as_str()),
            })?;
            ContextStrategy::load_recording(f)
        };
        Ok(match self {
            ContextKind::None => ContextStrategy::None,
            ContextKind::Silence => ContextStrategy::Silence,
            ContextKind::Vowel => ContextStrategy::Vowel(load(file)?),
            ContextKind::Utterance => ContextStrategy::Utterance(load(file)?),
            ContextKind::Loop => ContextStrategy::LoopedBuffer,
        })
    }
}

impl FromStr for ContextKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContextKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown context '{s}' (none|silence|vowel|utterance|loop)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowConfig {
    pub n_seconds: u32,
    pub strategy: ContextStrategy,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            n_seconds: 1,
            strategy: ContextStrategy::Silence,
        }
    }
}

impl WindowConfig {
    pub fn window_samples(&self) -> usize {
        window_samples(self.n_seconds)
    }

    pub fn prefix_samples(&self) -> usize {
        prefix_samples(self.n_seconds)
    }
}

pub fn window_samples(n_seconds: u32) -> usize {
    SAMPLE_RATE as usize * n_seconds as usize
}

/// Context prefix length: `16000·n − 3200`.
pub fn prefix_samples(n_seconds: u32) -> usize {
    window_samples(n_seconds) - 2 * BATCH_SAMPLES
}

/// One inversion input.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub samples: Vec<f32>,
    pub n_seconds: u32,
    /// Batch index of the working batch.
    pub working_index: u64,
    /// How many of the oldest samples are artificial.
    pub artificial: usize,
}

impl ContextWindow {
    pub fn working_span(&self) -> std::ops::Range<usize> {
        let p = prefix_samples(self.n_seconds);
        p..p + BATCH_SAMPLES
    }

    pub fn lookahead_span(&self) -> std::ops::Range<usize> {
        let w = window_samples(self.n_seconds);
        w - BATCH_SAMPLES..w
    }

    /// Absolute stream offset (in samples) of the window's first sample.
    /// Negative while the window reaches back before the stream started.
    pub fn start_offset(&self) -> i64 {
        self.working_index as i64 * BATCH_SAMPLES as i64 - prefix_samples(self.n_seconds) as i64
    }
}

/// Fills `deficit` samples from `source`, right-aligned and tiled
/// cyclically: the last element of `source` ends up last.
fn tile_right_aligned(source: &[f32], deficit: usize) -> Vec<f32> {
    if source.is_empty() {
        return vec![0.0; deficit];
    }
    let len = source.len() as i64;
    (0..deficit as i64)
        .map(|i| source[(len - deficit as i64 + i).rem_euclid(len) as usize])
        .collect()
}

/// Artificial context for a deficit of `deficit` samples.
pub fn artificial_fill(strategy: &ContextStrategy, deficit: usize, real_history: &[f32]) -> Vec<f32> {
    match strategy {
        ContextStrategy::None | ContextStrategy::Silence => vec![0.0; deficit],
        ContextStrategy::Vowel(rec) | ContextStrategy::Utterance(rec) => {
            tile_right_aligned(rec, deficit)
        }
        ContextStrategy::LoopedBuffer => tile_right_aligned(real_history, deficit),
    }
}

/// Rolling state that turns a batch stream into context windows.
#[derive(Debug, Clone)]
pub struct WindowBuilder {
    config: WindowConfig,
    /// Newest real samples before the pending batch, capped at the prefix length.
    history: VecDeque<f32>,
    /// Batch waiting for its lookahead.
    pending: Option<AudioBatch>,
    next_index: u64,
}

impl WindowBuilder {
    pub fn new(config: WindowConfig) -> Result<Self, WindowError> {
        if config.n_seconds == 0 {
            return Err(WindowError::BadWindowLength);
        }
        let cap = config.prefix_samples();
        Ok(Self {
            config,
            history: VecDeque::with_capacity(cap),
            pending: None,
            next_index: 0,
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    /// Real samples currently available as context.
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Accepts the next batch. Returns the window whose working batch is the
    /// previous one, or `None` for the very first batch.
    pub fn push_batch(&mut self, batch: AudioBatch) -> Result<Option<ContextWindow>, WindowError> {
        if batch.index != self.next_index {
            return Err(WindowError::OutOfOrderBatch {
                expected: self.next_index,
                got: batch.index,
            });
        }
        self.next_index += 1;
        let Some(working) = self.pending.replace(batch) else {
            return Ok(None);
        };
        let lookahead = self.pending.as_ref().expect("just stored");

        let prefix_len = self.config.prefix_samples();
        let deficit = prefix_len.saturating_sub(self.history.len());
        let mut samples = Vec::with_capacity(self.config.window_samples());
        if deficit > 0 {
            let (a, b) = self.history.as_slices();
            let real: Vec<f32> = if b.is_empty() { a.to_vec() } else { [a, b].concat() };
            samples.extend(artificial_fill(&self.config.strategy, deficit, &real));
        }
        samples.extend(self.history.iter().skip(self.history.len().saturating_sub(prefix_len)));
        samples.extend_from_slice(&working.samples);
        samples.extend_from_slice(&lookahead.samples);
        debug_assert_eq!(samples.len(), self.config.window_samples());

        let window = ContextWindow {
            samples,
            n_seconds: self.config.n_seconds,
            working_index: working.index,
            artificial: deficit,
        };

        self.history.extend(working.samples.iter().copied());
        let excess = self.history.len().saturating_sub(prefix_len);
        self.history.drain(..excess);
        Ok(Some(window))
    }
}
