//! WebSocket bridge for the browser viewer.
//!
//! One HTTP port serves `/stream` (one JSON text message per frame),
//! `/healthz`, and the viewer's static files at `/`. The pipeline thread only
//! ever calls [`BridgeServer::broadcast`], which never blocks: each client has
//! a 64-message queue and is dropped when it falls further behind.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot};

use crate::ema::{EmaFrame, EMA_DIM};
use crate::kinematics::AvatarPose;
use crate::profiler::LatencyRecord;

/// Per-client queue depth before a slow client is disconnected.
pub const CLIENT_BACKLOG: usize = 64;
pub const DEFAULT_WS_PORT: u16 = 8765;
const SEND_TIMEOUT: std::time::Duration = std::time::Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMessage {
    pub points: [[f64; 2]; 6],
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyMessage {
    pub model: f64,
    pub send: f64,
}

/// Wire schema of one `/stream` message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub seq: u64,
    pub speech: bool,
    pub ema: [f64; EMA_DIM],
    pub pose: PoseMessage,
    pub lat_ms: Option<LatencyMessage>,
}

impl FrameMessage {
    /// `frame_mm` supplies the `ema` array and must be in millimeters.
    pub fn new(pose: &AvatarPose, frame_mm: &EmaFrame, stats: Option<&LatencyRecord>) -> Self {
        Self {
            seq: frame_mm.seq,
            speech: frame_mm.speech,
            ema: frame_mm.values,
            pose: PoseMessage {
                points: pose.points,
                theta: pose.theta,
            },
            lat_ms: stats.map(|s| LatencyMessage {
                model: s.model_ms,
                send: s.send_ms,
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite floats serialize")
    }
}

/// Health report served at `/healthz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub published_count: u64,
    pub uptime_s: f64,
}

#[derive(Deserialize)]
struct ViewerStats {
    animate_ms: f64,
}

struct Shared {
    tx: broadcast::Sender<Utf8Bytes>,
    started: Instant,
    published: AtomicU64,
    animate_ms: Mutex<Option<f64>>,
    viewer_dir: Option<PathBuf>,
}

/// Handle to the running HTTP/WebSocket server. Dropping it stops the server.
pub struct BridgeServer {
    shared: Arc<Shared>,
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl BridgeServer {
    /// Binds `addr` (port 0 picks a free port) and serves on a background
    /// runtime thread.
    pub fn start(addr: SocketAddr, viewer_dir: Option<PathBuf>) -> std::io::Result<Self> {
        // bind synchronously so callers inside another runtime work too
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("ws-bridge")
            .enable_all()
            .build()?;
        let (tx, _) = broadcast::channel(CLIENT_BACKLOG);
        let shared = Arc::new(Shared {
            tx,
            started: Instant::now(),
            published: AtomicU64::new(0),
            animate_ms: Mutex::new(None),
            viewer_dir,
        });
        let app = router(shared.clone());
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("ws-bridge".into()).spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("ws bridge: {e}");
                        return;
                    }
                };
                let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                });
                if let Err(e) = serve.await {
                    log::error!("ws bridge stopped: {e}");
                }
            });
            runtime.shutdown_background();
        })?;
        log::info!("ws bridge listening on {addr}");
        Ok(Self {
            shared,
            addr,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.shared.tx.receiver_count()
    }

    /// Queues one message for every connected client. Never blocks.
    pub fn broadcast(&self, pose: &AvatarPose, frame_mm: &EmaFrame, stats: Option<&LatencyRecord>) {
        self.broadcast_text(FrameMessage::new(pose, frame_mm, stats).to_json());
    }

    pub fn broadcast_text(&self, text: String) {
        // an error only means nobody is listening
        let _ = self.shared.tx.send(Utf8Bytes::from(text));
    }

    pub fn set_published_count(&self, n: u64) {
        self.shared.published.store(n, Ordering::Relaxed);
    }

    /// Most recent `animate_ms` reported by a viewer, cleared on read.
    pub fn take_animate_ms(&self) -> Option<f64> {
        self.shared.animate_ms.lock().map(|mut v| v.take()).unwrap_or(None)
    }

    /// Most recent `animate_ms` without clearing it.
    pub fn latest_animate_ms(&self) -> Option<f64> {
        self.shared.animate_ms.lock().map(|v| *v).unwrap_or(None)
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/stream", get(stream_handler))
        .route("/healthz", get(health_handler))
        .fallback(get(static_handler))
        .with_state(shared)
}

async fn stream_handler(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    let rx = shared.tx.subscribe();
    ws.on_upgrade(move |socket| client_loop(socket, rx, shared))
}

async fn client_loop(mut socket: WebSocket, mut rx: broadcast::Receiver<Utf8Bytes>, shared: Arc<Shared>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    // a client that stops reading fills its socket buffer; treat a
                    // stalled send like a lagged queue
                    match tokio::time::timeout(SEND_TIMEOUT, socket.send(Message::Text(text))).await {
                        Ok(Ok(())) => {}
                        Ok(Err(_)) => break,
                        Err(_) => {
                            log::warn!("dropping stalled ws client");
                            break;
                        }
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("dropping slow ws client ({n} messages behind)");
                    let _ = tokio::time::timeout(SEND_TIMEOUT, socket.send(Message::Close(None))).await;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(t))) => match serde_json::from_str::<ViewerStats>(t.as_str()) {
                    Ok(stats) if stats.animate_ms.is_finite() => {
                        if let Ok(mut slot) = shared.animate_ms.lock() {
                            *slot = Some(stats.animate_ms);
                        }
                    }
                    _ => log::debug!("ignoring viewer message: {}", t.as_str()),
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn health_handler(State(shared): State<Arc<Shared>>) -> Json<Health> {
    Json(Health {
        published_count: shared.published.load(Ordering::Relaxed),
        uptime_s: shared.started.elapsed().as_secs_f64(),
    })
}

const PLACEHOLDER_PAGE: &str = "<!doctype html><html><head><title>artistream</title></head>\
<body><p>artistream is running. Frames are published on <code>/stream</code>; \
start with <code>--viewer-dir</code> to serve a viewer here.</p></body></html>";

/// Maps a request path to a file under `root`, rejecting anything that is
/// not a plain relative path.
pub fn resolve_static(root: &Path, uri_path: &str) -> Option<PathBuf> {
    let rel = uri_path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

async fn static_handler(State(shared): State<Arc<Shared>>, uri: Uri) -> Response {
    let Some(root) = &shared.viewer_dir else {
        return if uri.path() == "/" {
            Html(PLACEHOLDER_PAGE).into_response()
        } else {
            StatusCode::NOT_FOUND.into_response()
        };
    };
    let Some(path) = resolve_static(root, uri.path()) else {
        return StatusCode::BAD_REQUEST.into_response();
    };
    match std::fs::read(&path) {
        Ok(body) => ([(header::CONTENT_TYPE, content_type(&path))], body).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}
