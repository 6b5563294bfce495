//! Pearson-correlation evaluation of streamed trajectories and the
//! artificial-context comparison harness.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::ema::{load_trajectory, EmaError, EmaFrame, Space, DIM_NAMES, EMA_DIM, SAMPLES_PER_FRAME};
use crate::pipeline::{run_offline, BackendSpec, PipelineConfig, PipelineError};
use crate::postproc::FRAMES_PER_BATCH;
use crate::window::{prefix_samples, ContextStrategy, WindowConfig};

/// Largest tolerated length difference between prediction and reference.
pub const MAX_LENGTH_SLACK: usize = 10;
/// The pipeline publishes each batch one batch late.
pub const DEFAULT_ALIGN_SHIFT: usize = FRAMES_PER_BATCH;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series lengths differ ({0} vs {1})")]
    UnequalLength(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("constant series: correlation undefined")]
    DegenerateSeries,
    #[error("prediction has {pred} frames, reference {reference}: more than {MAX_LENGTH_SLACK} apart")]
    LengthMismatch { pred: usize, reference: usize },
    #[error("no dimension has a defined correlation")]
    AllDegenerate,
    #[error(transparent)]
    Ema(#[from] EmaError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Sample Pearson correlation, computed in two passes around the means.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::UnequalLength(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooShort(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// `None` where the correlation is undefined.
    pub per_dim: [Option<f64>; EMA_DIM],
    /// Unweighted mean over the defined dimensions.
    pub mean: f64,
    /// Number of frame pairs compared.
    pub frames: usize,
    pub degenerate: Vec<&'static str>,
    pub skip: usize,
    pub align_shift: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let per_dim: serde_json::Map<String, serde_json::Value> = DIM_NAMES
            .iter()
            .zip(&self.per_dim)
            .map(|(n, v)| (n.to_string(), serde_json::json!(v)))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "per_dim": per_dim,
            "mean": self.mean,
            "frames": self.frames,
            "degenerate": self.degenerate,
            "skip": self.skip,
            "align_shift": self.align_shift,
        }))
        .expect("json value serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<5} {:>8}", "dim", "pcc")?;
        for (name, v) in DIM_NAMES.iter().zip(&self.per_dim) {
            match v {
                Some(v) => writeln!(f, "{name:<5} {v:>8.4}")?,
                None => writeln!(f, "{name:<5} {:>8}", "n/a")?,
            }
        }
        writeln!(f, "{:<5} {:>8.4}", "mean", self.mean)?;
        write!(
            f,
            "{} frames compared (skip {}, shift {})",
            self.frames, self.skip, self.align_shift
        )
    }
}

/// Correlates `pred[i + align_shift]` with `reference[i]` for every
/// `i ≥ skip` that both sides cover.
pub fn evaluate_stream(
    pred: &[EmaFrame],
    reference: &[EmaFrame],
    skip: usize,
    align_shift: usize,
) -> Result<EvalReport, EvalError> {
    if pred.len().abs_diff(reference.len()) > MAX_LENGTH_SLACK {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    let end = reference.len().min(pred.len().saturating_sub(align_shift));
    let pairs: Vec<(&EmaFrame, &EmaFrame)> = (skip..end).map(|i| (&pred[i + align_shift], &reference[i])).collect();

    let mut per_dim = [None; EMA_DIM];
    let mut degenerate = Vec::new();
    for d in 0..EMA_DIM {
        let x: Vec<f64> = pairs.iter().map(|(p, _)| p.values[d]).collect();
        let y: Vec<f64> = pairs.iter().map(|(_, r)| r.values[d]).collect();
        match pearson(&x, &y) {
            Ok(r) => per_dim[d] = Some(r),
            Err(EvalError::DegenerateSeries) => {
                log::warn!("{}: constant series, excluded from the mean", DIM_NAMES[d]);
                degenerate.push(DIM_NAMES[d]);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_dim.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(EvalError::AllDegenerate);
    }
    Ok(EvalReport {
        per_dim,
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        frames: pairs.len(),
        degenerate,
        skip,
        align_shift,
    })
}

/// [`evaluate_stream`] on two millimeter CSV files.
pub fn evaluate_files(
    pred: impl AsRef<Path>,
    reference: impl AsRef<Path>,
    skip: usize,
    align_shift: usize,
) -> Result<EvalReport, EvalError> {
    let p = load_trajectory(pred, Space::Millimeters)?;
    let r = load_trajectory(reference, Space::Millimeters)?;
    evaluate_stream(&p, &r, skip, align_shift)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub strategy: &'static str,
    pub report: EvalReport,
    /// Published millimeter frames for this strategy.
    pub frames: Vec<EmaFrame>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub n_seconds: u32,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| serde_json::json!({"strategy": r.strategy, "mean_pcc": r.report.mean, "frames": r.report.frames}))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({"window_secs": self.n_seconds, "rows": rows}))
            .expect("json value serializes")
    }
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9}", "context", format!("{}s PCC", self.n_seconds))?;
        for r in &self.rows {
            writeln!(f, "{:<10} {:>9.4}", r.strategy, r.report.mean)?;
        }
        Ok(())
    }
}

/// Frames of the published stream that can depend on artificial context:
/// the context prefix, plus the one-batch output delay and one batch for the
/// seam into the first fully real window.
pub fn context_affected_frames(n_seconds: u32) -> usize {
    prefix_samples(n_seconds) / SAMPLES_PER_FRAME + 2 * FRAMES_PER_BATCH
}

/// Index of the first frame where two trajectories differ, if any.
pub fn first_difference(a: &[EmaFrame], b: &[EmaFrame]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x.values != y.values)
}

/// Index of the last frame where two trajectories differ, if any.
pub fn last_difference(a: &[EmaFrame], b: &[EmaFrame]) -> Option<usize> {
    a.iter().zip(b).rposition(|(x, y)| x.values != y.values)
}

/// Runs the pipeline once per strategy with the same backend and window
/// length, and scores each run against `reference`.
pub fn context_sweep(
    audio: &[f32],
    reference: &[EmaFrame],
    strategies: &[ContextStrategy],
    backend: &BackendSpec,
    base: &PipelineConfig,
    skip: usize,
    align_shift: usize,
) -> Result<SweepReport, EvalError> {
    let mut rows = Vec::with_capacity(strategies.len());
    for s in strategies {
        let config = PipelineConfig {
            window: WindowConfig {
                n_seconds: base.window.n_seconds,
                strategy: s.clone(),
            },
            ..base.clone()
        };
        let frames = run_offline(audio, config, backend.build(&base.norm)?)?;
        let report = evaluate_stream(&frames, reference, skip, align_shift)?;
        rows.push(SweepRow {
            strategy: s.name(),
            report,
            frames,
        });
    }
    Ok(SweepReport {
        n_seconds: base.window.n_seconds,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frames(rows: &[[f64; EMA_DIM]]) -> Vec<EmaFrame> {
        rows.iter()
            .enumerate()
            .map(|(i, v)| EmaFrame::new(i as u64, *v, Space::Millimeters, true))
            .collect()
    }

    fn ramp(n: usize) -> Vec<EmaFrame> {
        frames(
            &(0..n)
                .map(|i| std::array::from_fn(|d| ((i * (d + 3)) as f64 * 0.13).sin() + d as f64))
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn textbook_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // cov 4, var 5 each
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_malformed() {
        assert!(matches!(pearson(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), Err(EvalError::DegenerateSeries)));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(EvalError::TooShort(1))));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(EvalError::UnequalLength(2, 1))));
    }

    #[test]
    fn identical_streams_score_one() {
        let r = ramp(200);
        let rep = evaluate_stream(&r, &r, 0, 0).unwrap();
        assert!(rep.per_dim.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
        assert!((rep.mean - 1.0).abs() < 1e-12);
        assert_eq!(rep.frames, 200);
    }

    #[test]
    fn shift_and_skip_select_pairs() {
        let r = ramp(100);
        // pred is the reference delayed by 10 frames
        let mut pred = vec![EmaFrame::zeros(0, Space::Millimeters); 10];
        pred.extend(r.iter().copied());
        pred.truncate(100);
        let rep = evaluate_stream(&pred, &r, 5, 10).unwrap();
        assert!((rep.mean - 1.0).abs() < 1e-12);
        assert_eq!(rep.frames, 90 - 5);
        let unshifted = evaluate_stream(&pred, &r, 5, 0).unwrap();
        assert!(unshifted.mean < 0.99);
    }

    #[test]
    fn length_guard() {
        let r = ramp(100);
        assert!(evaluate_stream(&r[..89], &r, 0, 0).is_err());
        assert!(evaluate_stream(&r[..90], &r, 0, 0).is_ok());
    }

    #[test]
    fn degenerate_dims_excluded() {
        let mut r = ramp(50);
        for f in &mut r {
            f.values[4] = 1.5;
        }
        let rep = evaluate_stream(&r, &r, 0, 0).unwrap();
        assert_eq!(rep.per_dim[4], None);
        assert_eq!(rep.degenerate, vec!["TDx"]);
        assert!((rep.mean - 1.0).abs() < 1e-12);
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert!(v["per_dim"]["TDx"].is_null());
        assert!(rep.to_string().contains("n/a"));
    }

    #[test]
    fn affected_frame_counts() {
        assert_eq!(context_affected_frames(1), 80 + 20);
        assert_eq!(context_affected_frames(2), 180 + 20);
    }

    proptest! {
        #[test]
        fn affine_maps_give_unit_correlation(
            x in prop::collection::vec(-100.0f64..100.0, 3..60),
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
        ) {
            prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
            let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let down: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&x, &up).unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((pearson(&x, &down).unwrap() + 1.0).abs() < 1e-9);
        }

        #[test]
        fn symmetric(
            xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60),
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }
    }
}
