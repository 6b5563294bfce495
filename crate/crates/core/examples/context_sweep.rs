//! Compares artificial-context strategies with the Mock backend and reports
//! how far into the stream each one differs from silence context.

use std::sync::Arc;

use artistream::eval::{context_affected_frames, context_sweep, last_difference};
use artistream::pipeline::{run_offline, BackendSpec, PipelineConfig};
use artistream::window::ContextStrategy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let audio: Vec<f32> = (0..64_000)
        .map(|i| (0.3 + 0.2 * (i as f32 / 3000.0).sin()) * (i as f32 * 0.09).sin())
        .collect();
    let vowel = Arc::new((0..4000).map(|i| 0.3 * (i as f32 * 0.2).sin()).collect::<Vec<_>>());
    let strategies = [
        ContextStrategy::None,
        ContextStrategy::Silence,
        ContextStrategy::Vowel(vowel.clone()),
        ContextStrategy::Utterance(vowel),
        ContextStrategy::LoopedBuffer,
    ];
    let base = PipelineConfig::default();
    // the silence run doubles as the reference
    let reference = run_offline(&audio, base.clone(), Box::new(artistream::inversion::MockBackend))?;
    let report = context_sweep(&audio, &reference, &strategies, &BackendSpec::Mock, &base, 0, 0)?;
    print!("{report}");
    println!("frames that may depend on context: {}", context_affected_frames(1));
    for row in &report.rows {
        match last_difference(&row.frames, &reference) {
            Some(i) => println!("{:<10} differs up to frame {i}", row.strategy),
            None => println!("{:<10} identical", row.strategy),
        }
    }
    Ok(())
}
