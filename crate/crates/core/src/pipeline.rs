//! The streaming loop: audio → VAD → window → invert → select → smooth →
//! denormalize → kinematics → transport.
//!
//! [`Pipeline`] is the synchronous per-batch core and is what tests drive
//! directly. [`run_stream`] adds the capture context and the sinks.

use std::collections::VecDeque;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::audio::{batches_from_samples, AudioBatch, AudioError, BatchSource};
use crate::ema::{load_trajectory, EmaError, EmaFrame, NormSpec, Space, TrajectoryWriter, EMA_DIM};
use crate::inversion::{Backend, InversionError, InversionRequest, MockBackend, RemoteBackend, ReplayBackend};
use crate::kinematics::{pose_from_frame, AvatarPose, RigConfig};
use crate::postproc::{select_working_frames, FrameCountMismatch, PostProcessor, FRAMES_PER_BATCH};
use crate::profiler::{BatchTimer, LatencyRecord};
use crate::transport::shm::{ShmError, ShmWriter};
use crate::transport::ws::BridgeServer;
use crate::vad::{AlwaysSpeech, EnergyVad, VadConfig, VadConfigError, VoiceDetector};
use crate::window::{ContextStrategy, WindowBuilder, WindowConfig, WindowError};

/// Batches buffered between capture and processing.
pub const CAPTURE_QUEUE: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("audio: {0}")]
    Audio(#[from] AudioError),
    #[error("vad: {0}")]
    Vad(#[from] VadConfigError),
    #[error("window: {0}")]
    Window(#[from] WindowError),
    #[error("inversion: {0}")]
    Inversion(#[from] InversionError),
    #[error("postproc: {0}")]
    Selection(#[from] FrameCountMismatch),
    #[error("ema: {0}")]
    Ema(#[from] EmaError),
    #[error("transport: {0}")]
    Shm(#[from] ShmError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which inversion backend to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock,
    /// Millimeter trajectory CSV, normalized with the active spec.
    Replay(PathBuf),
    /// `host:port` of a model host.
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "mock" => Ok(BackendSpec::Mock),
            Some(("replay", path)) if !path.is_empty() => Ok(BackendSpec::Replay(path.into())),
            Some(("remote", addr)) if addr.contains(':') => Ok(BackendSpec::Remote(addr.to_string())),
            _ => Err(format!("unknown backend '{s}' (mock | replay:<csv> | remote:<host:port>)")),
        }
    }
}

impl BackendSpec {
    pub fn build(&self, norm: &NormSpec) -> Result<Box<dyn Backend>, PipelineError> {
        Ok(match self {
            BackendSpec::Mock => Box::new(MockBackend),
            BackendSpec::Replay(path) => {
                let mm = load_trajectory(path, Space::Millimeters)?;
                let normalized = mm.iter().map(|f| norm.normalize(f)).collect::<Result<Vec<_>, _>>()?;
                Box::new(ReplayBackend::new(&normalized)?)
            }
            BackendSpec::Remote(addr) => Box::new(RemoteBackend::new(addr.clone())),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub window: WindowConfig,
    /// `None` treats every batch as speech.
    pub vad: Option<VadConfig>,
    pub smoothing: bool,
    pub norm: NormSpec,
    pub rig: RigConfig,
    /// Normalized pose shown before any speech. Defaults to the rig's rest
    /// geometry when `None`.
    pub rest_pose: Option<[f64; EMA_DIM]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            vad: Some(VadConfig::default()),
            smoothing: true,
            norm: NormSpec::placeholder(),
            rig: RigConfig::placeholder(),
            rest_pose: None,
        }
    }
}

impl PipelineConfig {
    pub fn resolved_rest_pose(&self) -> Result<[f64; EMA_DIM], EmaError> {
        match self.rest_pose {
            Some(p) => {
                EmaFrame::new(0, p, Space::Normalized, false).check_normalized()?;
                Ok(p)
            }
            None => Ok(self.norm.normalize(&self.rig.rest_frame(0))?.values),
        }
    }
}

/// Everything one input batch produced.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Index of the batch whose arrival produced this output.
    pub batch_index: u64,
    /// True when the frames came from inversion, false for holds.
    pub speech: bool,
    pub normalized: [EmaFrame; FRAMES_PER_BATCH],
    pub millimeters: [EmaFrame; FRAMES_PER_BATCH],
    pub poses: [AvatarPose; FRAMES_PER_BATCH],
    pub timer: BatchTimer,
}

/// Synchronous per-batch processing core.
///
/// Batch `k + 1` completes the window for working batch `k`, so the frames
/// returned for batch `k + 1` describe audio from batch `k`. The first batch
/// returns a rest-pose hold. Every call returns exactly ten frames.
pub struct Pipeline {
    config: PipelineConfig,
    windows: WindowBuilder,
    vad: Box<dyn VoiceDetector>,
    backend: Box<dyn Backend>,
    post: PostProcessor,
    /// VAD decisions for batches still waiting to be the working batch.
    decisions: VecDeque<bool>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, backend: Box<dyn Backend>) -> Result<Self, PipelineError> {
        let vad: Box<dyn VoiceDetector> = match &config.vad {
            Some(c) => Box::new(EnergyVad::new(c.clone())?),
            None => Box::new(AlwaysSpeech),
        };
        let post = PostProcessor::new(config.resolved_rest_pose()?, config.smoothing);
        Ok(Self {
            windows: WindowBuilder::new(config.window.clone())?,
            vad,
            backend,
            post,
            decisions: VecDeque::with_capacity(2),
            config,
        })
    }

    /// Swaps in a different voice detector.
    pub fn with_detector(mut self, vad: Box<dyn VoiceDetector>) -> Self {
        self.vad = vad;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Frames published so far.
    pub fn published(&self) -> u64 {
        self.post.next_seq()
    }

    pub fn process(&mut self, batch: AudioBatch) -> Result<BatchOutput, PipelineError> {
        let mut timer = BatchTimer::start(batch.capture_time);
        let batch_index = batch.index;
        self.decisions.push_back(self.vad.is_speech(&batch.samples));

        let window = self.windows.push_batch(batch)?;
        let (speech, normalized) = match window {
            None => (false, self.post.silence_hold()),
            Some(w) => {
                let working_speech = self.decisions.pop_front().unwrap_or(false);
                let skip_deficit = w.artificial > 0 && self.config.window.strategy == ContextStrategy::None;
                if working_speech && !skip_deficit {
                    let req = InversionRequest::from_window(&w);
                    let backend = &mut self.backend;
                    let resp = timer.time_model(|| backend.invert(&req))?;
                    let selected = select_working_frames(&resp, w.n_seconds)?;
                    for f in &selected {
                        f.check_normalized()?;
                    }
                    (true, self.post.speech(&selected))
                } else {
                    (false, self.post.silence_hold())
                }
            }
        };

        let mut millimeters = normalized;
        for (mm, n) in millimeters.iter_mut().zip(&normalized) {
            *mm = self.config.norm.denormalize(n)?;
        }
        let poses = millimeters.map(|f| pose_from_frame(&f, &self.config.rig));
        Ok(BatchOutput {
            batch_index,
            speech,
            normalized,
            millimeters,
            poses,
            timer,
        })
    }

    /// Runs a whole recording without pacing or sinks.
    pub fn run_samples(&mut self, samples: &[f32]) -> Result<Vec<BatchOutput>, PipelineError> {
        batches_from_samples(samples).into_iter().map(|b| self.process(b)).collect()
    }
}

/// Convenience: millimeter frames for a recording.
pub fn run_offline(
    samples: &[f32],
    config: PipelineConfig,
    backend: Box<dyn Backend>,
) -> Result<Vec<EmaFrame>, PipelineError> {
    let mut p = Pipeline::new(config, backend)?;
    Ok(p.run_samples(samples)?.iter().flat_map(|o| o.millimeters).collect())
}

/// Destinations for published frames.
#[derive(Default)]
pub struct Sinks {
    pub shm: Option<ShmWriter>,
    pub ws: Option<BridgeServer>,
    pub record: Option<TrajectoryWriter<BufWriter<File>>>,
}

#[derive(Debug, Clone, Default)]
pub struct StreamReport {
    pub batches: u64,
    pub frames: u64,
    pub speech_batches: u64,
    pub latency: Vec<LatencyRecord>,
    /// Set when the stop flag ended the stream early.
    pub interrupted: bool,
}

/// Publishes one batch to every sink and closes its latency record.
pub fn publish(out: &BatchOutput, sinks: &mut Sinks) -> Result<LatencyRecord, PipelineError> {
    let mut timer = out.timer;
    let send_start = Instant::now();
    if let Some(shm) = sinks.shm.as_mut() {
        shm.write_all(&out.millimeters)?;
    }
    let animate = sinks.ws.as_ref().and_then(|ws| ws.take_animate_ms());
    let provisional = timer.record_batch(out.batch_index, out.speech, animate, Instant::now());
    if let Some(ws) = sinks.ws.as_ref() {
        for (pose, frame) in out.poses.iter().zip(&out.millimeters) {
            ws.broadcast(pose, frame, Some(&provisional));
        }
        ws.set_published_count(out.millimeters.last().map_or(0, |f| f.seq + 1));
    }
    let send_end = Instant::now();
    timer.send(send_start, send_end);
    let record = timer.record_batch(out.batch_index, out.speech, animate, send_end);
    if let Some(rec) = sinks.record.as_mut() {
        for f in &out.millimeters {
            rec.write(f)?;
        }
    }
    Ok(record)
}

/// Drives `source` through `pipeline` into `sinks` until end of stream or
/// until `stop` is set. Capture runs on its own thread, feeding a bounded
/// queue.
pub fn run_stream(
    source: Box<dyn BatchSource>,
    mut pipeline: Pipeline,
    sinks: &mut Sinks,
    stop: Arc<AtomicBool>,
) -> Result<StreamReport, PipelineError> {
    let (tx, rx) = mpsc::sync_channel::<Result<AudioBatch, AudioError>>(CAPTURE_QUEUE);
    let capture_stop = stop.clone();
    let capture = std::thread::Builder::new().name("capture".into()).spawn(move || {
        let mut source = source;
        while !capture_stop.load(Ordering::Relaxed) {
            match source.read_batch() {
                Ok(Some(b)) => {
                    if tx.send(Ok(b)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    })?;

    let mut report = StreamReport::default();
    let result = (|| {
        for item in rx.iter() {
            if stop.load(Ordering::Relaxed) {
                report.interrupted = true;
                break;
            }
            let out = pipeline.process(item?)?;
            let record = publish(&out, sinks)?;
            report.batches += 1;
            report.frames += FRAMES_PER_BATCH as u64;
            report.speech_batches += u64::from(out.speech);
            report.latency.push(record);
        }
        if let Some(rec) = sinks.record.as_mut() {
            rec.flush()?;
        }
        Ok::<_, PipelineError>(())
    })();
    // unblocks the capture thread if we bailed out early
    stop.store(true, Ordering::Relaxed);
    drop(rx);
    let _ = capture.join();
    result.map(|()| report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{FileSource, BATCH_SAMPLES};
    use crate::ema::Channel;
    use crate::postproc::working_frame_range;

    fn tone(n: usize, amp: f32) -> Vec<f32> {
        (0..n).map(|i| amp * (i as f32 * 0.07).sin() * (1.0 + (i / 160) as f32 * 0.01)).collect()
    }

    fn mock_config(n: u32) -> PipelineConfig {
        PipelineConfig {
            window: WindowConfig {
                n_seconds: n,
                strategy: ContextStrategy::Silence,
            },
            vad: None,
            smoothing: false,
            ..Default::default()
        }
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!("mock".parse::<BackendSpec>().unwrap(), BackendSpec::Mock);
        assert_eq!(
            "replay:ref.csv".parse::<BackendSpec>().unwrap(),
            BackendSpec::Replay("ref.csv".into())
        );
        assert_eq!(
            "remote:localhost:9000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Remote("localhost:9000".into())
        );
        assert!("remote:nohost".parse::<BackendSpec>().is_err());
        assert!("gru".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn ten_frames_per_batch_with_gap_free_seq() {
        let audio = tone(36 * BATCH_SAMPLES, 0.5);
        let mut p = Pipeline::new(mock_config(1), Box::new(MockBackend)).unwrap();
        let outs = p.run_samples(&audio).unwrap();
        assert_eq!(outs.len(), 36);
        let seqs: Vec<u64> = outs.iter().flat_map(|o| o.millimeters.map(|f| f.seq)).collect();
        assert_eq!(seqs, (0..360).collect::<Vec<_>>());
        assert!(!outs[0].speech);
        assert!(outs[1..].iter().all(|o| o.speech));
    }

    #[test]
    fn published_frames_are_mock_of_working_batch() {
        // oracle: batch k+1's frames equal Mock applied to batch k's own slices
        for n in [1, 2] {
            let audio = tone(30 * BATCH_SAMPLES, 0.8);
            let mut p = Pipeline::new(mock_config(n), Box::new(MockBackend)).unwrap();
            let outs = p.run_samples(&audio).unwrap();
            for (k, out) in outs.iter().enumerate().skip(1) {
                let working = &audio[(k - 1) * BATCH_SAMPLES..k * BATCH_SAMPLES];
                for (i, f) in out.normalized.iter().enumerate() {
                    assert_eq!(f.values, MockBackend::frame_for_slice(&working[160 * i..160 * (i + 1)]));
                }
            }
            assert_eq!(working_frame_range(n).len(), FRAMES_PER_BATCH);
        }
    }

    #[test]
    fn silence_gated_by_vad_holds() {
        let mut audio = tone(10 * BATCH_SAMPLES, 0.7);
        audio.extend(vec![0.0; 10 * BATCH_SAMPLES]);
        let cfg = PipelineConfig {
            vad: Some(VadConfig::default()),
            ..mock_config(1)
        };
        let mut p = Pipeline::new(cfg, Box::new(MockBackend)).unwrap();
        let outs = p.run_samples(&audio).unwrap();
        let last_speech = outs.iter().rposition(|o| o.speech).unwrap();
        // working batch 9 is the last loud one, published at arrival of 10;
        // hangover keeps 3 more batches as speech
        assert_eq!(last_speech, 10 + 3);
        let held = &outs[last_speech + 1];
        assert!(held.normalized.iter().all(|f| !f.speech));
        assert!(held
            .normalized
            .iter()
            .all(|f| f.values == outs[last_speech].normalized[9].values));
        assert_eq!(held.timer.record_batch(0, false, None, Instant::now()).model_ms, 0.0);
    }

    #[test]
    fn none_strategy_holds_until_history_is_full() {
        let audio = tone(20 * BATCH_SAMPLES, 0.7);
        let cfg = PipelineConfig {
            window: WindowConfig {
                n_seconds: 1,
                strategy: ContextStrategy::None,
            },
            ..mock_config(1)
        };
        let mut p = Pipeline::new(cfg, Box::new(MockBackend)).unwrap();
        let outs = p.run_samples(&audio).unwrap();
        // prefix needs 8 real batches, so working batch 8 is the first inverted
        let first = outs.iter().position(|o| o.speech).unwrap();
        assert_eq!(first, 9);
    }

    #[test]
    fn rest_pose_hold_uses_rig_geometry() {
        let mut p = Pipeline::new(mock_config(1), Box::new(MockBackend)).unwrap();
        let out = p.process(AudioBatch::new(0, vec![0.0; BATCH_SAMPLES])).unwrap();
        let rig = RigConfig::placeholder();
        for f in &out.millimeters {
            for c in Channel::ALL {
                let (a, b) = (f.point(c), rig.rest(c));
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
        assert_eq!(out.poses[0].theta, 0.0);
    }

    #[test]
    fn bad_rest_pose_rejected() {
        let cfg = PipelineConfig {
            rest_pose: Some([2.0; EMA_DIM]),
            ..mock_config(1)
        };
        assert!(matches!(Pipeline::new(cfg, Box::new(MockBackend)), Err(PipelineError::Ema(_))));
    }

    #[test]
    fn stream_to_sinks() {
        let dir = tempfile::tempdir().unwrap();
        let shm = ShmWriter::create(dir.path().join("buf"), 1 << 20, Space::Millimeters).unwrap();
        let rec = TrajectoryWriter::new(BufWriter::new(File::create(dir.path().join("rec.csv")).unwrap())).unwrap();
        let mut sinks = Sinks {
            shm: Some(shm),
            ws: None,
            record: Some(rec),
        };
        let src = FileSource::from_samples(tone(12 * BATCH_SAMPLES, 0.5), false);
        let p = Pipeline::new(mock_config(1), Box::new(MockBackend)).unwrap();
        let report = run_stream(Box::new(src), p, &mut sinks, Arc::new(AtomicBool::new(false))).unwrap();
        assert_eq!((report.batches, report.frames), (12, 120));
        assert_eq!(report.latency.len(), 12);
        assert!(report.latency.iter().all(|r| r.overall_ms >= r.model_ms + r.send_ms));
        assert_eq!(sinks.shm.as_ref().unwrap().published_count(), 120);
        drop(sinks);
        let back = load_trajectory(dir.path().join("rec.csv"), Space::Millimeters).unwrap();
        assert_eq!(back.len(), 120);
    }

    #[test]
    fn stop_flag_ends_stream() {
        let src = FileSource::from_samples(tone(50 * BATCH_SAMPLES, 0.5), false);
        let p = Pipeline::new(mock_config(1), Box::new(MockBackend)).unwrap();
        let stop = Arc::new(AtomicBool::new(true));
        let report = run_stream(Box::new(src), p, &mut Sinks::default(), stop).unwrap();
        assert!(report.batches < 50);
    }
}
