//! Starts the WebSocket bridge, publishes a short synthetic stream and prints
//! what a connected client receives, plus the `/healthz` report.

use std::io::{Read, Write};
use std::time::Duration;

use artistream::kinematics::{pose_from_frame, RigConfig};
use artistream::transport::ws::BridgeServer;
use futures::StreamExt;

#[tokio::main(flavor = "multi_thread", worker_threads = 2)]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = BridgeServer::start("127.0.0.1:0".parse()?, None)?;
    let addr = server.local_addr();
    let (mut client, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/stream")).await?;

    let server = tokio::task::spawn_blocking(move || {
        while server.client_count() == 0 {
            std::thread::sleep(Duration::from_millis(5));
        }
        let rig = RigConfig::placeholder();
        for seq in 0..5 {
            let mut f = rig.rest_frame(seq);
            f.values[11] -= seq as f64;
            server.broadcast(&pose_from_frame(&f, &rig), &f, None);
        }
        server.set_published_count(5);
        server
    })
    .await?;

    for _ in 0..5 {
        if let Some(msg) = client.next().await {
            println!("{}", msg?.into_text()?);
        }
    }
    let mut s = std::net::TcpStream::connect(addr)?;
    write!(s, "GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")?;
    let mut resp = String::new();
    s.read_to_string(&mut resp)?;
    println!("healthz: {}", resp.rsplit("\r\n\r\n").next().unwrap_or(""));
    drop(server);
    Ok(())
}
