//! Streams a WAV file (or a generated tone) through the Mock backend into a
//! shared-memory buffer and prints what was published.
//!
//!     cargo run --example stream_file -- [input.wav]

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use artistream::audio::{FileSource, SAMPLE_RATE};
use artistream::ema::Space;
use artistream::inversion::MockBackend;
use artistream::pipeline::{run_stream, Pipeline, PipelineConfig, Sinks};
use artistream::profiler::summarize;
use artistream::transport::shm::{ShmReader, ShmWriter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = match std::env::args().nth(1) {
        Some(path) => FileSource::open(path, false)?,
        None => {
            let tone = (0..SAMPLE_RATE as usize * 36 / 10)
                .map(|i| 0.5 * (i as f32 * 0.0863).sin() * (1.0 + (i as f32 / 4000.0).sin()) / 2.0)
                .collect();
            FileSource::from_samples(tone, false)
        }
    };

    let dir = tempfile::tempdir()?;
    let shm_file = dir.path().join("frames");
    let mut sinks = Sinks {
        shm: Some(ShmWriter::create(&shm_file, 5 << 20, Space::Millimeters)?),
        ..Default::default()
    };
    let pipeline = Pipeline::new(PipelineConfig::default(), Box::new(MockBackend))?;
    let report = run_stream(Box::new(source), pipeline, &mut sinks, Arc::new(AtomicBool::new(false)))?;

    let reader = ShmReader::open(&shm_file)?;
    let frames = reader.poll(0);
    println!("{} batches, {} frames in shared memory", report.batches, frames.len());
    for f in frames.iter().step_by(50) {
        println!("seq {:>4} speech {:<5} TT=({:6.2}, {:6.2}) mm", f.seq, f.speech, f.values[0], f.values[1]);
    }
    println!("{}", summarize(&report.latency)?);
    Ok(())
}
