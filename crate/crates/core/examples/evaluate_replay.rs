//! End-to-end self-consistency: a Replay backend fed its own reference must
//! reproduce it exactly once the one-batch delay is compensated.

use artistream::ema::{write_trajectory, EmaFrame, NormSpec, Space};
use artistream::eval::{evaluate_stream, DEFAULT_ALIGN_SHIFT};
use artistream::pipeline::{run_offline, BackendSpec, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let norm = NormSpec::placeholder();
    let reference: Vec<EmaFrame> = (0..500u64)
        .map(|s| {
            let v = std::array::from_fn(|d| {
                let mid = (norm.min_mm[d] + norm.max_mm[d]) / 2.0;
                mid + 0.3 * (norm.max_mm[d] - mid) * ((s as f64) * 0.05 + d as f64).sin()
            });
            EmaFrame::new(s, v, Space::Millimeters, true)
        })
        .collect();
    let dir = tempfile::tempdir()?;
    let csv = dir.path().join("ref.csv");
    write_trajectory(std::fs::File::create(&csv)?, &reference)?;

    let config = PipelineConfig {
        vad: None,
        smoothing: false,
        ..Default::default()
    };
    let audio = vec![0.1f32; 80_000];
    let pred = run_offline(&audio, config, BackendSpec::Replay(csv).build(&norm)?)?;
    for shift in [0, DEFAULT_ALIGN_SHIFT] {
        let rep = evaluate_stream(&pred, &reference, 0, shift)?;
        println!("align-shift {shift:>2}: mean PCC {:.9}", rep.mean);
    }
    println!("{}", evaluate_stream(&pred, &reference, 0, DEFAULT_ALIGN_SHIFT)?);
    Ok(())
}
