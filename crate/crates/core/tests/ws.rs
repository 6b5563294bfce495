use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use artistream::ema::{EmaFrame, Space};
use artistream::kinematics::{pose_from_frame, RigConfig};
use artistream::transport::ws::{BridgeServer, FrameMessage, Health};
use futures::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    let status = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = out.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

fn wait_for_clients(server: &BridgeServer, n: usize) {
    let t = Instant::now();
    while server.client_count() != n {
        assert!(t.elapsed() < Duration::from_secs(5), "client count stuck at {}", server.client_count());
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn frame(seq: u64) -> EmaFrame {
    let mut f = RigConfig::placeholder().rest_frame(seq);
    f.values[0] += (seq % 7) as f64 * 0.1;
    f.speech = seq % 3 != 0;
    f
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn thousand_frames_at_100_per_second_arrive_in_order() {
    let server = BridgeServer::start(local(), None).unwrap();
    let url = format!("ws://{}/stream", server.local_addr());
    let (mut client, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let server = tokio::task::spawn_blocking(move || {
        wait_for_clients(&server, 1);
        let rig = RigConfig::placeholder();
        let t0 = Instant::now();
        for seq in 0..1000u64 {
            // paced at 10 ms per frame
            let due = t0 + Duration::from_millis(10 * seq);
            std::thread::sleep(due.saturating_duration_since(Instant::now()));
            let f = frame(seq);
            server.broadcast(&pose_from_frame(&f, &rig), &f, None);
        }
        server
    });
    let mut seqs = Vec::with_capacity(1000);
    while seqs.len() < 1000 {
        let msg = tokio::time::timeout(Duration::from_secs(5), client.next())
            .await
            .expect("message within 5 s")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = msg {
            let m: FrameMessage = serde_json::from_str(t.as_str()).unwrap();
            seqs.push(m.seq);
        }
    }
    assert_eq!(seqs, (0..1000).collect::<Vec<_>>());
    drop(server.await.unwrap());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn message_schema_and_viewer_stats() {
    let server = BridgeServer::start(local(), None).unwrap();
    let url = format!("ws://{}/stream", server.local_addr());
    let (mut client, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let server = tokio::task::spawn_blocking(move || {
        wait_for_clients(&server, 1);
        let f = EmaFrame::zeros(0, Space::Millimeters);
        server.broadcast(&pose_from_frame(&f, &RigConfig::placeholder()), &f, None);
        server
    })
    .await
    .unwrap();
    let Message::Text(t) = client.next().await.unwrap().unwrap() else { panic!("expected text") };
    let v: serde_json::Value = serde_json::from_str(t.as_str()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["ema", "lat_ms", "pose", "seq", "speech"]);
    assert_eq!(v["ema"].as_array().unwrap().len(), 12);
    assert!(v["ema"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
    assert!(v["pose"]["theta"].is_number());

    client.send(Message::Text(r#"{"animate_ms": 12.5}"#.into())).await.unwrap();
    client.send(Message::Text("not json".into())).await.unwrap();
    let t = Instant::now();
    let server = tokio::task::spawn_blocking(move || {
        while server.latest_animate_ms().is_none() {
            assert!(t.elapsed() < Duration::from_secs(5));
            std::thread::sleep(Duration::from_millis(5));
        }
        server
    })
    .await
    .unwrap();
    assert_eq!(server.take_animate_ms(), Some(12.5));
    assert_eq!(server.take_animate_ms(), None);
}

#[test]
fn healthz_reports_count_and_uptime() {
    let server = BridgeServer::start(local(), None).unwrap();
    server.set_published_count(360);
    let (status, body) = http_get(server.local_addr(), "/healthz");
    assert_eq!(status, 200);
    let h: Health = serde_json::from_str(&body).unwrap();
    assert_eq!(h.published_count, 360);
    assert!(h.uptime_s >= 0.0);
}

#[test]
fn static_files_served_at_root() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>viewer</h1>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let server = BridgeServer::start(local(), Some(dir.path().to_path_buf())).unwrap();
    let addr = server.local_addr();
    assert_eq!(http_get(addr, "/"), (200, "<h1>viewer</h1>".to_string()));
    assert_eq!(http_get(addr, "/app.js").1, "console.log(1)");
    assert_eq!(http_get(addr, "/missing.js").0, 404);
    assert_ne!(http_get(addr, "/../etc/passwd").0, 200);

    let bare = BridgeServer::start(local(), None).unwrap();
    let (status, body) = http_get(bare.local_addr(), "/");
    assert_eq!(status, 200);
    assert!(body.contains("/stream"));
}

#[test]
fn client_that_never_reads_is_dropped_without_blocking() {
    let server = BridgeServer::start(local(), None).unwrap();
    let addr = server.local_addr();
    // raw upgrade, then never read
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "GET /stream HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n\
         Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n"
    )
    .unwrap();
    wait_for_clients(&server, 1);
    let rig = RigConfig::placeholder();
    let t = Instant::now();
    let mut seq = 0;
    while server.client_count() > 0 {
        for _ in 0..1000 {
            let f = frame(seq);
            server.broadcast(&pose_from_frame(&f, &rig), &f, None);
            seq += 1;
        }
        assert!(t.elapsed() < Duration::from_secs(10), "slow client never dropped");
        std::thread::sleep(Duration::from_millis(1));
    }
    drop(s);
}
