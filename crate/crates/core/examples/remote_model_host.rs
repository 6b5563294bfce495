//! A model host speaking the length-prefixed TCP protocol.
//!
//! `cargo run --example remote_model_host -- 9000` serves the Mock model on
//! port 9000 until killed, so `artistream stream --backend remote:localhost:9000`
//! can use it. Without a port it serves on a free port and runs one client
//! request against itself.

use std::net::TcpListener;

use artistream::inversion::{mock_handler, spawn_server, Backend, InversionRequest, RemoteBackend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    match std::env::args().nth(1) {
        Some(port) => {
            let listener = TcpListener::bind(("0.0.0.0", port.parse::<u16>()?))?;
            println!("serving on {}", listener.local_addr()?);
            spawn_server(listener, mock_handler()).join().ok();
        }
        None => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            spawn_server(listener, mock_handler());
            let mut client = RemoteBackend::new(addr.to_string());
            let req = InversionRequest {
                samples: (0..16_000).map(|i| (i as f32 * 0.05).sin() * 0.2).collect(),
                sample_rate: 16_000,
                n_seconds: 1,
                start_offset: 0,
            };
            let t = std::time::Instant::now();
            let resp = client.invert(&req)?;
            println!("{} frames from {addr} in {:.2?}", resp.frames.len(), t.elapsed());
            println!("frame 80: {:?}", resp.frames[80].values.map(|v| (v * 1000.0).round() / 1000.0));
        }
    }
    Ok(())
}
