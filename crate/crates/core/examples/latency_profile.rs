//! Profiles a paced stream with a remote model host that takes ~30 ms per
//! request, then prints the per-portion summary and the CSV rows.

use std::net::TcpListener;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use artistream::audio::FileSource;
use artistream::ema::EMA_DIM;
use artistream::inversion::{spawn_server, RemoteBackend};
use artistream::pipeline::{run_stream, Pipeline, PipelineConfig, Sinks};
use artistream::profiler::{summarize, write_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    spawn_server(
        listener,
        Arc::new(|s: &[f32], _| {
            std::thread::sleep(Duration::from_millis(30));
            vec![[0.0f32; EMA_DIM]; s.len() / 160]
        }),
    );

    let audio: Vec<f32> = (0..16_000 * 2).map(|i| 0.4 * (i as f32 * 0.07).sin()).collect();
    let pipeline = Pipeline::new(PipelineConfig::default(), Box::new(RemoteBackend::new(addr)))?;
    let report = run_stream(
        Box::new(FileSource::from_samples(audio, true)),
        pipeline,
        &mut Sinks::default(),
        Arc::new(AtomicBool::new(false)),
    )?;
    print!("{}", summarize(&report.latency)?);
    write_csv(std::io::stdout(), &report.latency[..5])?;
    Ok(())
}
