//! Audio ingestion: WAV files or a live microphone, chopped into 0.1 s batches
//! of 16 kHz mono samples.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
/// Samples per batch (0.1 s at 16 kHz).
pub const BATCH_SAMPLES: usize = 1600;
pub const BATCH_DURATION: Duration = Duration::from_millis(100);
/// Microphone ring capacity: two seconds of 16 kHz audio.
pub const MIC_RING_SAMPLES: usize = 2 * SAMPLE_RATE as usize;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("audio device unavailable: {0}")]
    DeviceUnavailable(String),
    #[error("capture overrun: more than {} samples buffered, the pipeline is not keeping real time", MIC_RING_SAMPLES)]
    Overrun,
    #[error("audio i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AudioError {
    fn from(e: std::io::Error) -> Self {
        AudioError::Io(e.to_string())
    }
}

impl From<hound::Error> for AudioError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => AudioError::Io(io.to_string()),
            hound::Error::Unsupported => {
                AudioError::UnsupportedFormat("codec is not PCM or IEEE float".into())
            }
            other => AudioError::UnsupportedFormat(other.to_string()),
        }
    }
}

/// 0.1 s of 16 kHz mono audio.
#[derive(Debug, Clone)]
pub struct AudioBatch {
    pub index: u64,
    /// Always exactly [`BATCH_SAMPLES`] long.
    pub samples: Vec<f32>,
    /// Zero samples appended to complete the final batch of a file.
    pub pad: usize,
    pub capture_time: Instant,
}

impl AudioBatch {
    pub fn new(index: u64, samples: Vec<f32>) -> Self {
        assert_eq!(samples.len(), BATCH_SAMPLES, "batch must hold {BATCH_SAMPLES} samples");
        Self {
            index,
            samples,
            pad: 0,
            capture_time: Instant::now(),
        }
    }

    /// Absolute sample offset of the first sample on the stream timeline.
    pub fn start_sample(&self) -> u64 {
        self.index * BATCH_SAMPLES as u64
    }
}

/// Where audio comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceKind {
    WavFile(PathBuf),
    /// `None` selects the host's default input device.
    Microphone(Option<String>),
}

/// A stream of batches consumed by exactly one pipeline stage.
pub trait BatchSource: Send {
    /// Next batch, or `Ok(None)` at end of stream.
    fn read_batch(&mut self) -> Result<Option<AudioBatch>, AudioError>;
}

/// Opens a source. `realtime` throttles file sources to one batch per 0.1 s;
/// microphones are inherently real time.
pub fn open_source(kind: &SourceKind, realtime: bool) -> Result<Box<dyn BatchSource>, AudioError> {
    match kind {
        SourceKind::WavFile(path) => Ok(Box::new(FileSource::open(path, realtime)?)),
        SourceKind::Microphone(device) => Ok(Box::new(mic::open(device.as_deref())?)),
    }
}

/// Decodes a WAV file to 16 kHz mono in `[-1, 1]`. Stereo is averaged; other
/// rates are linearly resampled.
pub fn decode_wav(path: impl AsRef<Path>) -> Result<Vec<f32>, AudioError> {
    let reader = hound::WavReader::open(path)?;
    decode_wav_reader(reader)
}

pub fn decode_wav_reader<R: std::io::Read>(
    reader: hound::WavReader<R>,
) -> Result<Vec<f32>, AudioError> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{channels} channels (mono or stereo only)"
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<Result<_, _>>()?
        }
        (hound::SampleFormat::Float, 32) => {
            reader.into_samples::<f32>().collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    let mono = downmix(&interleaved, channels);
    Ok(if spec.sample_rate == SAMPLE_RATE {
        mono
    } else {
        resample_linear(&mono, spec.sample_rate, SAMPLE_RATE)
    })
}

/// Averages interleaved channels into one.
pub fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

/// Linear-interpolation resampler over a complete signal.
pub fn resample_linear(input: &[f32], from_rate: u32, to_rate: u32) -> Vec<f32> {
    if input.is_empty() || from_rate == to_rate {
        return input.to_vec();
    }
    let out_len = (input.len() as u64 * to_rate as u64).div_ceil(from_rate as u64) as usize;
    let step = from_rate as f64 / to_rate as f64;
    let last = input.len() - 1;
    (0..out_len)
        .map(|k| {
            let pos = k as f64 * step;
            let i = (pos.floor() as usize).min(last);
            let frac = (pos - i as f64) as f32;
            let a = input[i];
            let b = input[(i + 1).min(last)];
            a + (b - a) * frac
        })
        .collect()
}

/// Chunked variant of [`resample_linear`] for capture callbacks. Produces
/// the same samples as the whole-signal version, minus the tail it cannot
/// interpolate until more input arrives.
#[derive(Debug, Clone)]
pub struct LinearResampler {
    step: f64,
    /// Read position relative to the start of the next chunk; `[-1, 0)`
    /// means between `prev` and the chunk's first sample.
    pos: f64,
    prev: f32,
}

impl LinearResampler {
    pub fn new(from_rate: u32, to_rate: u32) -> Self {
        Self {
            step: from_rate as f64 / to_rate as f64,
            pos: 0.0,
            prev: 0.0,
        }
    }

    pub fn process(&mut self, chunk: &[f32], out: &mut Vec<f32>) {
        if chunk.is_empty() {
            return;
        }
        let len = chunk.len() as f64;
        while self.pos < len - 1.0 {
            let fl = self.pos.floor();
            let frac = (self.pos - fl) as f32;
            let i = fl as isize;
            let a = if i < 0 { self.prev } else { chunk[i as usize] };
            let b = chunk[(i + 1) as usize];
            out.push(a + (b - a) * frac);
            self.pos += self.step;
        }
        self.pos -= len;
        self.prev = chunk[chunk.len() - 1];
    }
}

/// Splits a decoded signal into zero-padded batches.
pub fn batches_from_samples(samples: &[f32]) -> Vec<AudioBatch> {
    samples
        .chunks(BATCH_SAMPLES)
        .enumerate()
        .map(|(i, chunk)| {
            let mut s = chunk.to_vec();
            let pad = BATCH_SAMPLES - s.len();
            s.resize(BATCH_SAMPLES, 0.0);
            AudioBatch {
                pad,
                ..AudioBatch::new(i as u64, s)
            }
        })
        .collect()
}

/// Batches from a decoded WAV file, optionally paced to real time.
pub struct FileSource {
    samples: Vec<f32>,
    next_index: u64,
    realtime: bool,
    started: Option<Instant>,
}

impl FileSource {
    pub fn open(path: impl AsRef<Path>, realtime: bool) -> Result<Self, AudioError> {
        Ok(Self::from_samples(decode_wav(path)?, realtime))
    }

    pub fn from_samples(samples: Vec<f32>, realtime: bool) -> Self {
        Self {
            samples,
            next_index: 0,
            realtime,
            started: None,
        }
    }

    pub fn batch_count(&self) -> usize {
        self.samples.len().div_ceil(BATCH_SAMPLES)
    }
}

impl BatchSource for FileSource {
    fn read_batch(&mut self) -> Result<Option<AudioBatch>, AudioError> {
        let start = self.next_index as usize * BATCH_SAMPLES;
        if start >= self.samples.len() {
            return Ok(None);
        }
        if self.realtime {
            // Batch k becomes "available" once its 0.1 s has elapsed, but
            // batch 0 is released at t=0 so k lands at k·100 ms.
            let t0 = *self.started.get_or_insert_with(Instant::now);
            let due = t0 + BATCH_DURATION * self.next_index as u32;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        let end = (start + BATCH_SAMPLES).min(self.samples.len());
        let mut samples = self.samples[start..end].to_vec();
        let pad = BATCH_SAMPLES - samples.len();
        samples.resize(BATCH_SAMPLES, 0.0);
        let batch = AudioBatch {
            pad,
            ..AudioBatch::new(self.next_index, samples)
        };
        self.next_index += 1;
        Ok(Some(batch))
    }
}

/// Producer half of the capture ring. Audio callbacks push interleaved
/// device-rate samples here; downmixing and resampling happen on push.
pub struct CaptureFeed {
    producer: rtrb::Producer<f32>,
    channels: usize,
    resampler: Option<LinearResampler>,
    overrun: Arc<AtomicBool>,
    scratch: Vec<f32>,
}

impl CaptureFeed {
    pub fn push(&mut self, interleaved: &[f32]) {
        let mono = downmix(interleaved, self.channels);
        self.scratch.clear();
        let data: &[f32] = match &mut self.resampler {
            Some(r) => {
                r.process(&mono, &mut self.scratch);
                &self.scratch
            }
            None => &mono,
        };
        if self.producer.push_entire_slice(data).is_err() {
            self.overrun.store(true, Ordering::Release);
        }
    }
}

/// Consumer half of the capture ring.
pub struct MicSource {
    consumer: rtrb::Consumer<f32>,
    overrun: Arc<AtomicBool>,
    failed: Arc<AtomicBool>,
    next_index: u64,
    // Keeps the capture context alive for the lifetime of the source.
    _guard: Option<Box<dyn Send>>,
}

/// Creates a connected feed/source pair for a device delivering
/// `device_rate` Hz with `channels` interleaved channels.
pub fn capture_channel(device_rate: u32, channels: usize) -> (CaptureFeed, MicSource) {
    let (producer, consumer) = rtrb::RingBuffer::new(MIC_RING_SAMPLES);
    let overrun = Arc::new(AtomicBool::new(false));
    let feed = CaptureFeed {
        producer,
        channels: channels.max(1),
        resampler: (device_rate != SAMPLE_RATE)
            .then(|| LinearResampler::new(device_rate, SAMPLE_RATE)),
        overrun: overrun.clone(),
        scratch: Vec::new(),
    };
    let source = MicSource {
        consumer,
        overrun,
        failed: Arc::new(AtomicBool::new(false)),
        next_index: 0,
        _guard: None,
    };
    (feed, source)
}

impl MicSource {
    #[cfg_attr(not(feature = "mic"), allow(dead_code))]
    fn with_guard(mut self, guard: Box<dyn Send>, failed: Arc<AtomicBool>) -> Self {
        self._guard = Some(guard);
        self.failed = failed;
        self
    }
}

impl BatchSource for MicSource {
    fn read_batch(&mut self) -> Result<Option<AudioBatch>, AudioError> {
        loop {
            if self.overrun.load(Ordering::Acquire) {
                return Err(AudioError::Overrun);
            }
            if self.failed.load(Ordering::Acquire) {
                return Err(AudioError::Io("capture device reported an error".into()));
            }
            if self.consumer.slots() >= BATCH_SAMPLES {
                let mut samples = vec![0.0; BATCH_SAMPLES];
                self.consumer
                    .pop_entire_slice(&mut samples)
                    .expect("slots checked above");
                let batch = AudioBatch::new(self.next_index, samples);
                self.next_index += 1;
                return Ok(Some(batch));
            }
            if self.consumer.is_abandoned() {
                return Ok(None);
            }
            thread::sleep(Duration::from_millis(1));
        }
    }
}

#[cfg(feature = "mic")]
mod mic {
    use super::*;
    use cpal::traits::{DeviceTrait, HostTrait, StreamTrait};
    use std::sync::mpsc;

    struct StopOnDrop(Arc<AtomicBool>);

    impl Drop for StopOnDrop {
        fn drop(&mut self) {
            self.0.store(true, Ordering::Release);
        }
    }

    pub fn open(device_name: Option<&str>) -> Result<MicSource, AudioError> {
        let stop = Arc::new(AtomicBool::new(false));
        let failed = Arc::new(AtomicBool::new(false));
        let (ready_tx, ready_rx) = mpsc::channel();
        let name = device_name.map(str::to_owned);
        let (stop_c, failed_c) = (stop.clone(), failed.clone());

        // cpal streams are not Send on every host, so the stream lives and
        // dies on its own capture thread.
        thread::Builder::new()
            .name("artistream-capture".into())
            .spawn(move || {
                let setup = || -> Result<(cpal::Stream, MicSource), AudioError> {
                    let host = cpal::default_host();
                    let device = match &name {
                        None => host.default_input_device().ok_or_else(|| {
                            AudioError::DeviceUnavailable("no default input device".into())
                        })?,
                        Some(wanted) => host
                            .input_devices()
                            .map_err(|e| AudioError::DeviceUnavailable(e.to_string()))?
                            .find(|d| {
                                d.to_string() == *wanted
                                    || d.description().is_ok_and(|desc| desc.name() == wanted)
                            })
                            .ok_or_else(|| {
                                AudioError::DeviceUnavailable(format!("no input device {wanted:?}"))
                            })?,
                    };
                    let supported = device
                        .default_input_config()
                        .map_err(|e| AudioError::DeviceUnavailable(e.to_string()))?;
                    let config: cpal::StreamConfig = supported.into();
                    let (mut feed, source) =
                        capture_channel(config.sample_rate, config.channels as usize);
                    let failed_cb = failed_c.clone();
                    let stream = device
                        .build_input_stream(
                            config,
                            move |data: &[f32], _: &cpal::InputCallbackInfo| feed.push(data),
                            move |err| {
                                log::error!("capture error: {err}");
                                failed_cb.store(true, Ordering::Release);
                            },
                            None,
                        )
                        .map_err(|e| AudioError::DeviceUnavailable(e.to_string()))?;
                    stream
                        .play()
                        .map_err(|e| AudioError::DeviceUnavailable(e.to_string()))?;
                    Ok((stream, source))
                };
                match setup() {
                    Ok((stream, source)) => {
                        let _ = ready_tx.send(Ok(source));
                        while !stop_c.load(Ordering::Acquire) {
                            thread::sleep(Duration::from_millis(20));
                        }
                        drop(stream);
                    }
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                    }
                }
            })?;

        let source = ready_rx
            .recv()
            .map_err(|_| AudioError::DeviceUnavailable("capture thread exited".into()))??;
        Ok(source.with_guard(Box::new(StopOnDrop(stop)), failed))
    }
}

#[cfg(not(feature = "mic"))]
mod mic {
    use super::*;

    pub fn open(_device_name: Option<&str>) -> Result<MicSource, AudioError> {
        Err(AudioError::DeviceUnavailable(
            "built without microphone support; rebuild with `--features mic`".into(),
        ))
    }
}
