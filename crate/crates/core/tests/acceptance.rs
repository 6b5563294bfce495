//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use artistream::audio::{batches_from_samples, AudioBatch, FileSource, BATCH_SAMPLES};
use artistream::ema::{write_trajectory, EmaFrame, NormSpec, Space, EMA_DIM};
use artistream::eval::{context_affected_frames, evaluate_stream, last_difference, pearson, EvalError};
use artistream::inversion::{Backend, InversionRequest, MockBackend};
use artistream::kinematics::{lower_lip_base, pose_from_frame, RigConfig};
use artistream::pipeline::{run_offline, run_stream, BackendSpec, Pipeline, PipelineConfig, Sinks};
use artistream::postproc::{cubic_bezier, seam_control_points, select_working_frames, smooth_seam};
use artistream::profiler::ColumnStats;
use artistream::transport::shm::{ShmReader, ShmWriter};
use artistream::transport::ws::BridgeServer;
use artistream::vad::{is_speech, VadConfig, VadState};
use artistream::window::{ContextStrategy, WindowBuilder, WindowConfig};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Speech-like test signal: a tone whose loudness drifts per frame.
fn voiced(n: usize, seed: f32) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let t = i as f32 / 16_000.0;
            let env = 0.35 + 0.3 * (t * 2.3 + seed).sin() + 0.05 * ((i / 160) as f32 * 0.9 + seed).cos();
            env * (t * 180.0 * std::f32::consts::TAU).sin()
        })
        .collect()
}

fn window_arithmetic() -> Outcome {
    let t = Instant::now();
    for n in [1u32, 2] {
        let audio = voiced(40 * BATCH_SAMPLES, n as f32);
        let mut wb = WindowBuilder::new(WindowConfig {
            n_seconds: n,
            strategy: ContextStrategy::Silence,
        })
        .map_err(|e| e.to_string())?;
        let kept = (100 * n as usize - 20)..(100 * n as usize - 10);
        let mut windows = 0;
        for batch in batches_from_samples(&audio) {
            let Some(w) = wb.push_batch(batch).map_err(|e| e.to_string())? else { continue };
            windows += 1;
            ensure!(w.samples.len() == 16_000 * n as usize, "n={n}: window of {} samples", w.samples.len());
            let resp = MockBackend
                .invert(&InversionRequest::from_window(&w))
                .map_err(|e| e.to_string())?;
            let selected = select_working_frames(&resp, n).map_err(|e| e.to_string())?;
            let k = w.working_index as usize;
            let working = &audio[k * BATCH_SAMPLES..(k + 1) * BATCH_SAMPLES];
            for (i, f) in selected.iter().enumerate() {
                ensure!(
                    f.values == MockBackend::frame_for_slice(&working[160 * i..160 * (i + 1)]),
                    "n={n} batch {k}: frame {i} is not Mock(working slice {i})"
                );
                ensure!(resp.frames[kept.start + i].values == f.values, "kept range is not {kept:?}");
            }
        }
        ensure!(windows == 39, "n={n}: {windows} windows from 40 batches");
    }
    let el = t.elapsed();
    ensure!(el < Duration::from_secs(1), "took {el:?}");
    Ok(format!("kept 80..89 (n=1), 180..189 (n=2); {el:.2?}"))
}

fn replay_self_consistency() -> Outcome {
    let t = Instant::now();
    let norm = NormSpec::placeholder();
    // 10 s synthetic trajectory well inside the placeholder ranges
    let reference: Vec<EmaFrame> = (0..1000u64)
        .map(|s| {
            let values = std::array::from_fn(|d| {
                let (lo, hi) = (norm.min_mm[d], norm.max_mm[d]);
                let u = 0.5 + 0.4 * ((s as f64) * 0.021 * (d as f64 + 1.0) + d as f64).sin();
                lo + u * (hi - lo)
            });
            EmaFrame::new(s, values, Space::Millimeters, true)
        })
        .collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv = dir.path().join("ref.csv");
    write_trajectory(std::fs::File::create(&csv).map_err(|e| e.to_string())?, &reference)
        .map_err(|e| e.to_string())?;
    let backend = BackendSpec::Replay(csv).build(&norm).map_err(|e| e.to_string())?;
    let config = PipelineConfig {
        vad: None,
        smoothing: false,
        norm,
        ..Default::default()
    };
    let pred = run_offline(&voiced(160_000, 0.0), config, backend).map_err(|e| e.to_string())?;
    let rep = evaluate_stream(&pred, &reference, 0, 10).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    ensure!((rep.mean - 1.0).abs() <= 1e-9, "mean PCC {}", rep.mean);
    ensure!(el < Duration::from_secs(5), "took {el:?}");
    Ok(format!("mean PCC {:.12} over {} frames; {el:.2?}", rep.mean, rep.frames))
}

fn smoothing() -> Outcome {
    let norm_frame = |v: f64| EmaFrame::new(0, [v; EMA_DIM], Space::Normalized, true);
    let cur: [EmaFrame; 10] = [0.2, -0.7, 0.9, 0.31, -0.45, 0.0, 0.1, 0.2, 0.3, 0.4].map(norm_frame);
    let out = smooth_seam(Some((Some(norm_frame(-0.8)), norm_frame(0.6))), &cur);
    ensure!(out[3].values == cur[3].values, "B(1) differs from current[3]");
    let c = 0.42;
    let flat = smooth_seam(Some((Some(norm_frame(c)), norm_frame(c))), &[norm_frame(c); 10]);
    ensure!(
        flat.iter().all(|f| f.values.iter().all(|v| (v - c).abs() <= 1e-15)),
        "constant signal moved"
    );
    let b = cubic_bezier(seam_control_points(None, 0.0, 1.0, 1.0), 0.5);
    ensure!((b - 0.5).abs() <= 1e-12, "B(0.5) = {b}");
    Ok(format!("B(1) exact, constant idempotent, B(0.5) = {b}"))
}

fn transport() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("frames");
    let mut writer = ShmWriter::create(&path, 5 << 20, Space::Millimeters).map_err(|e| e.to_string())?;
    let reader = ShmReader::open(&path).map_err(|e| e.to_string())?;
    // f32-representable values, since records store f32
    let frames: Vec<EmaFrame> = (0..360u64)
        .map(|s| {
            let values = std::array::from_fn(|d| ((s as f32) * 0.173 - d as f32 * 3.7).sin() as f64 * 20.0);
            let values = values.map(|v: f64| v as f32 as f64);
            EmaFrame::new(s, values, Space::Millimeters, s % 4 != 0)
        })
        .collect();
    writer.write_all(&frames).map_err(|e| e.to_string())?;
    let back = reader.poll(0);
    ensure!(back.len() == 360, "polled {} frames", back.len());
    for (a, b) in frames.iter().zip(&back) {
        ensure!(
            a.seq == b.seq && a.speech == b.speech && a.values.map(f64::to_bits) == b.values.map(f64::to_bits),
            "frame {} differs",
            a.seq
        );
    }

    let mut lat = Vec::with_capacity(2000);
    for (i, f) in frames.iter().cycle().take(2000).enumerate() {
        let mut f = *f;
        f.seq = 360 + i as u64;
        let t = Instant::now();
        writer.write(&f).map_err(|e| e.to_string())?;
        let got = reader.poll(f.seq);
        lat.push(t.elapsed().as_secs_f64() * 1e3);
        ensure!(got.len() == 1 && got[0].seq == f.seq, "poll after write returned {} frames", got.len());
    }
    let s = ColumnStats::from_values(&lat).ok_or("no samples")?;
    ensure!(s.mean < 5.0 && s.p95 < 10.0, "write+poll mean {:.4} ms, p95 {:.4} ms", s.mean, s.p95);
    Ok(format!("360 frames bit-identical; write+poll mean {:.4} ms, p95 {:.4} ms", s.mean, s.p95))
}

fn real_time() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sinks = Sinks {
        shm: Some(ShmWriter::create(dir.path().join("rt"), 5 << 20, Space::Millimeters).map_err(|e| e.to_string())?),
        ws: Some(BridgeServer::start("127.0.0.1:0".parse().unwrap(), None).map_err(|e| e.to_string())?),
        record: None,
    };
    let source = FileSource::from_samples(voiced(57_600, 0.3), true);
    let pipeline = Pipeline::new(PipelineConfig::default(), Box::new(MockBackend)).map_err(|e| e.to_string())?;
    let report = run_stream(Box::new(source), pipeline, &mut sinks, Arc::new(AtomicBool::new(false)))
        .map_err(|e| e.to_string())?;
    let published = sinks.shm.as_ref().map_or(0, |s| s.published_count());
    ensure!(report.batches == 36, "{} batches", report.batches);
    ensure!(published == 360 && report.frames == 360, "{published} frames published");
    let overall: Vec<f64> = report.latency.iter().map(|r| r.overall_ms).collect();
    let s = ColumnStats::from_values(&overall).ok_or("no records")?;
    ensure!(s.mean < 100.0, "mean overall {:.3} ms", s.mean);
    Ok(format!("36 batches, 360 frames, mean overall {:.3} ms (max {:.3})", s.mean, s.max))
}

fn context_and_pearson() -> Outcome {
    let vowel: Arc<Vec<f32>> = Arc::new((0..8000).map(|i| 0.4 * (i as f32 * 0.11).sin()).collect());
    let utterance: Arc<Vec<f32>> = Arc::new(voiced(24_000, 2.0));
    let strategies = [
        ContextStrategy::None,
        ContextStrategy::Silence,
        ContextStrategy::Vowel(vowel),
        ContextStrategy::Utterance(utterance),
        ContextStrategy::LoopedBuffer,
    ];
    let mut notes = Vec::new();
    for n in [1u32, 2] {
        let audio = voiced(60 * BATCH_SAMPLES, 1.0);
        let runs: Vec<Vec<EmaFrame>> = strategies
            .iter()
            .map(|s| {
                let config = PipelineConfig {
                    window: WindowConfig {
                        n_seconds: n,
                        strategy: s.clone(),
                    },
                    ..Default::default()
                };
                run_offline(&audio, config, Box::new(MockBackend))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure!(runs.len() == strategies.len(), "one row per strategy");
        let limit = context_affected_frames(n);
        let mut worst = 0;
        for (i, a) in runs.iter().enumerate() {
            for b in &runs[i + 1..] {
                if let Some(last) = last_difference(a, b) {
                    ensure!(last < limit, "n={n}: strategies differ at frame {last} (limit {limit})");
                    worst = worst.max(last + 1);
                }
            }
        }
        notes.push(format!("n={n}: differences within first {worst} of {limit} frames"));
    }

    // pearson suite
    ensure!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).map_err(|e| e.to_string())? - 0.8).abs() < 1e-12, "0.8 fixture");
    ensure!(matches!(pearson(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(EvalError::DegenerateSeries)), "constant input");
    let mut runner = TestRunner::deterministic();
    let series = proptest::collection::vec(-100.0f64..100.0, 3..200);
    for _ in 0..200 {
        let x = series.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        let y = series.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        let a = (0.1f64..10.0).new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        let up: Vec<f64> = x.iter().map(|v| a * v + 3.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -a * v - 1.0).collect();
        let r = |p: &[f64], q: &[f64]| pearson(p, q).map_err(|e| e.to_string());
        ensure!((r(&x, &up)? - 1.0).abs() < 1e-9, "affine a>0");
        ensure!((r(&x, &down)? + 1.0).abs() < 1e-9, "affine a<0");
        let m = x.len().min(y.len());
        ensure!((r(&x[..m], &y[..m])? - r(&y[..m], &x[..m])?).abs() <= 1e-12, "symmetry");
    }
    notes.push("pearson suite ok".into());
    Ok(notes.join("; "))
}

fn kinematics() -> Outcome {
    let rig = RigConfig::placeholder();
    let mut runner = TestRunner::deterministic();
    let theta = -rig.theta_max()..rig.theta_max();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let th = theta.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        let p = lower_lip_base(&rig, th);
        let (dx, dy) = (p[0] - rig.pivot()[0], p[1] - rig.pivot()[1]);
        worst = worst.max(((dx * dx + dy * dy).sqrt() - rig.r()).abs());
    }
    ensure!(worst <= 1e-9, "radius error {worst:e}");
    let rest = rig.rest_frame(0);
    let pose = pose_from_frame(&rest, &rig);
    ensure!(pose.theta == 0.0 && pose.points == rest.points(), "rest pose moved");
    Ok(format!("max radius error {worst:.1e} over 1000 angles; rest identity exact"))
}

fn vad() -> Outcome {
    let cfg = VadConfig::default();
    let silence = vec![0.0f32; BATCH_SAMPLES];
    let sine: Vec<f32> = (0..BATCH_SAMPLES)
        .map(|i| (i as f32 * 440.0 * std::f32::consts::TAU / 16_000.0).sin())
        .collect();
    ensure!(!is_speech(&silence, &cfg, VadState::default()).0, "silence detected as speech");
    let (loud, mut state) = is_speech(&sine, &cfg, VadState::default());
    ensure!(loud, "-3 dBFS sine not detected");
    let mut held = 0;
    for _ in 0..10 {
        let (d, s) = is_speech(&silence, &cfg, state);
        state = s;
        if !d {
            break;
        }
        held += 1;
    }
    ensure!(held == cfg.hangover_batches, "hangover held {held} batches");

    let mut p = Pipeline::new(PipelineConfig::default(), Box::new(MockBackend)).map_err(|e| e.to_string())?;
    let mut batches = vec![sine.clone(); 3];
    batches.extend(vec![silence.clone(); 8]);
    let outs = batches
        .into_iter()
        .enumerate()
        .map(|(i, s)| p.process(AudioBatch::new(i as u64, s)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let last = outs.last().ok_or("no output")?;
    ensure!(last.normalized.len() == 10, "hold has {} frames", last.normalized.len());
    ensure!(last.normalized.iter().all(|f| !f.speech), "hold frames flagged as speech");
    let prev = outs[outs.len() - 2].normalized[9].values;
    ensure!(last.normalized.iter().all(|f| f.values == prev), "hold does not repeat the last frame");
    Ok(format!("hangover {held} batches; silence emits 10 held frames"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("window arithmetic", window_arithmetic),
        ("replay self-consistency", replay_self_consistency),
        ("seam smoothing", smoothing),
        ("transport round trip and latency", transport),
        ("real-time sustainability", real_time),
        ("context sweep locality and pearson suite", context_and_pearson),
        ("jaw kinematics", kinematics),
        ("voice activity gate", vad),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
