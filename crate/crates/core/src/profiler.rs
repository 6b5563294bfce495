//! Per-batch latency decomposition: Model / Send / Animate / Overall.
//!
//! `overall` is wall time from batch arrival to the end of publication (shm
//! write plus WebSocket enqueue), so it includes VAD, window assembly and
//! post-processing glue. `animate` is reported back by a connected viewer and
//! is absent otherwise.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("no latency records to summarize")]
    EmptyInput,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    #[serde(rename = "batch")]
    pub batch_index: u64,
    pub speech: bool,
    pub model_ms: f64,
    pub send_ms: f64,
    pub animate_ms: Option<f64>,
    pub overall_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Stage timestamps for one batch, captured with a monotonic clock.
#[derive(Debug, Clone, Copy)]
pub struct BatchTimer {
    arrival: Instant,
    model: Duration,
    send: Duration,
}

impl BatchTimer {
    pub fn start(arrival: Instant) -> Self {
        Self {
            arrival,
            model: Duration::ZERO,
            send: Duration::ZERO,
        }
    }

    pub fn model(&mut self, start: Instant, end: Instant) {
        self.model += end.saturating_duration_since(start);
    }

    pub fn send(&mut self, start: Instant, end: Instant) {
        self.send += end.saturating_duration_since(start);
    }

    /// Runs `f`, attributing its wall time to the model stage.
    pub fn time_model<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.model(t, Instant::now());
        out
    }

    pub fn time_send<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.send(t, Instant::now());
        out
    }

    /// Closes the record at `published`.
    pub fn record_batch(
        &self,
        batch_index: u64,
        speech: bool,
        animate_ms: Option<f64>,
        published: Instant,
    ) -> LatencyRecord {
        let model_ms = ms(self.model);
        let send_ms = ms(self.send);
        // stages are nested inside the batch, so this only guards clock rounding
        let overall_ms = ms(published.saturating_duration_since(self.arrival)).max(model_ms + send_ms);
        LatencyRecord {
            batch_index,
            speech,
            model_ms,
            send_ms,
            animate_ms,
            overall_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl ColumnStats {
    /// Nearest-rank percentiles. `None` for an empty column.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| sorted[((p / 100.0 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p50: rank(50.0),
            p95: rank(95.0),
            max: *sorted.last().expect("non-empty"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnSet {
    pub batches: usize,
    pub model: ColumnStats,
    pub send: ColumnStats,
    pub animate: Option<ColumnStats>,
    pub overall: ColumnStats,
}

impl ColumnSet {
    fn from_records<'a>(records: impl Iterator<Item = &'a LatencyRecord> + Clone) -> Option<Self> {
        let col = |f: fn(&LatencyRecord) -> f64| -> Vec<f64> { records.clone().map(f).collect() };
        let animate: Vec<f64> = records.clone().filter_map(|r| r.animate_ms).collect();
        Some(Self {
            batches: records.clone().count(),
            model: ColumnStats::from_values(&col(|r| r.model_ms))?,
            send: ColumnStats::from_values(&col(|r| r.send_ms))?,
            animate: ColumnStats::from_values(&animate),
            overall: ColumnStats::from_values(&col(|r| r.overall_ms))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub all: ColumnSet,
    /// `None` when no batch contained speech.
    pub speech_only: Option<ColumnSet>,
}

impl LatencySummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

pub fn summarize(records: &[LatencyRecord]) -> Result<LatencySummary, ProfileError> {
    let all = ColumnSet::from_records(records.iter()).ok_or(ProfileError::EmptyInput)?;
    let speech_only = ColumnSet::from_records(records.iter().filter(|r| r.speech));
    Ok(LatencySummary { all, speech_only })
}

fn write_table(f: &mut fmt::Formatter<'_>, title: &str, set: &ColumnSet) -> fmt::Result {
    writeln!(f, "{title} ({} batches)", set.batches)?;
    writeln!(f, "  {:<8} {:>9} {:>9} {:>9} {:>9}", "portion", "mean", "p50", "p95", "max")?;
    let mut row = |name: &str, s: Option<&ColumnStats>| match s {
        Some(s) => writeln!(
            f,
            "  {:<8} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            name, s.mean, s.p50, s.p95, s.max
        ),
        None => writeln!(f, "  {:<8} {:>9} {:>9} {:>9} {:>9}", name, "-", "-", "-", "-"),
    };
    row("model", Some(&set.model))?;
    row("send", Some(&set.send))?;
    row("animate", set.animate.as_ref())?;
    row("overall", Some(&set.overall))
}

impl fmt::Display for LatencySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "latency (ms)")?;
        write_table(f, "all batches", &self.all)?;
        match &self.speech_only {
            Some(s) => write_table(f, "speech batches", s),
            None => writeln!(f, "speech batches: none"),
        }
    }
}

/// Writes `batch,speech,model_ms,send_ms,animate_ms,overall_ms` rows.
pub fn write_csv<W: Write>(out: W, records: &[LatencyRecord]) -> Result<(), ProfileError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["batch", "speech", "model_ms", "send_ms", "animate_ms", "overall_ms"])?;
    for r in records {
        w.write_record([
            r.batch_index.to_string(),
            r.speech.to_string(),
            r.model_ms.to_string(),
            r.send_ms.to_string(),
            r.animate_ms.map(|v| v.to_string()).unwrap_or_default(),
            r.overall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<LatencyRecord>, ProfileError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<LatencyRecord>() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<LatencyRecord>, ProfileError> {
    read_csv(std::fs::File::open(path)?)
}
