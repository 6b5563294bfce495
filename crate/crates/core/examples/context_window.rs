//! Shows how the rolling context window is assembled while real history is
//! still short, for each artificial-context strategy.

use std::sync::Arc;

use artistream::audio::batches_from_samples;
use artistream::window::{prefix_samples, ContextStrategy, WindowBuilder, WindowConfig};

fn main() {
    let n = 1;
    let audio: Vec<f32> = (0..16_000).map(|i| 0.1 + (i as f32) * 1e-5).collect();
    let vowel = Arc::new(vec![-0.5f32; 3000]);
    let strategies = [
        ContextStrategy::None,
        ContextStrategy::Silence,
        ContextStrategy::Vowel(vowel.clone()),
        ContextStrategy::Utterance(vowel),
        ContextStrategy::LoopedBuffer,
    ];
    println!("window {} samples, prefix {}", 16_000 * n, prefix_samples(n));
    for strategy in strategies {
        let name = strategy.name();
        let mut wb = WindowBuilder::new(WindowConfig { n_seconds: n, strategy }).unwrap();
        print!("{name:<10}");
        for batch in batches_from_samples(&audio).into_iter().take(10) {
            if let Some(w) = wb.push_batch(batch).unwrap() {
                print!(" k={}:{:>5} art ({:+.2})", w.working_index, w.artificial, w.samples[0]);
            }
        }
        println!();
    }
}
