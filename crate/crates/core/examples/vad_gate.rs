//! Runs the energy VAD over loud, quiet and silent batches and shows the
//! hangover keeping the gate open.

use artistream::audio::BATCH_SAMPLES;
use artistream::vad::{is_speech, rms_dbfs, VadConfig, VadState};

fn main() {
    let cfg = VadConfig::default();
    let sine = |amp: f32| -> Vec<f32> {
        (0..BATCH_SAMPLES).map(|i| amp * (i as f32 * 0.1728).sin()).collect()
    };
    let batches = [
        ("silence", vec![0.0; BATCH_SAMPLES]),
        ("sine -46 dBFS", sine(0.007)),
        ("sine -3 dBFS", sine(1.0)),
        ("silence", vec![0.0; BATCH_SAMPLES]),
        ("silence", vec![0.0; BATCH_SAMPLES]),
        ("silence", vec![0.0; BATCH_SAMPLES]),
        ("silence", vec![0.0; BATCH_SAMPLES]),
    ];
    let mut state = VadState::default();
    for (name, b) in &batches {
        let (speech, next) = is_speech(b, &cfg, state);
        state = next;
        println!("{name:<14} {:>8.1} dBFS -> {}", rms_dbfs(b), if speech { "speech" } else { "silence" });
    }
}
