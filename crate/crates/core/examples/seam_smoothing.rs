//! Prints one dimension across a batch seam with and without the Bézier
//! transition.

use artistream::ema::{EmaFrame, Space, EMA_DIM};
use artistream::postproc::smooth_seam;

fn frame(v: f64) -> EmaFrame {
    EmaFrame::new(0, [v; EMA_DIM], Space::Normalized, true)
}

fn main() {
    let prev = (Some(frame(-0.30)), frame(-0.25));
    let current = [0.40, 0.42, 0.45, 0.47, 0.50, 0.52, 0.55, 0.57, 0.60, 0.62].map(frame);
    let smoothed = smooth_seam(Some(prev), &current);
    println!("{:>5} {:>8} {:>8}", "frame", "raw", "smoothed");
    println!("{:>5} {:>8.3} {:>8.3}", "prev", -0.25, -0.25);
    for (i, (r, s)) in current.iter().zip(&smoothed).enumerate() {
        println!("{:>5} {:>8.3} {:>8.3}", i, r.values[0], s.values[0]);
    }
}
