//! Acoustic-to-articulatory inversion backends.
//!
//! A backend turns one context window into `100·n` normalized EMA frames,
//! frame `j` covering samples `[160·j, 160·(j+1))` of the window. Model
//! inference itself lives outside this crate: [`RemoteBackend`] speaks a
//! small length-prefixed TCP protocol to any model host, while
//! [`MockBackend`] and [`ReplayBackend`] exist to exercise the plumbing.
//!
//! Wire format, all integers and floats little-endian:
//!
//! ```text
//! request:  u32 payload_len | u32 n_samples | u32 sample_rate | f32 × n_samples
//! response: u32 payload_len | u32 n_frames  | u32 dim (=12)   | f32 × n_frames·12
//! ```

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use crate::audio::SAMPLE_RATE;
use crate::ema::{EmaFrame, Space, EMA_DIM, FRAME_RATE, SAMPLES_PER_FRAME};
use crate::window::ContextWindow;

pub const DEFAULT_REMOTE_TIMEOUT: Duration = Duration::from_millis(500);
/// Upper bound on a single payload; anything larger is treated as garbage.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("remote backend unavailable at {addr}: {reason}")]
    RemoteUnavailable { addr: String, reason: String },
    #[error("remote backend timed out")]
    Timeout,
    #[error("malformed remote message: {0}")]
    RemoteProtocol(String),
    #[error("backend returned {got} frames, expected {expected}")]
    FrameCountMismatch { expected: usize, got: usize },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("replay trajectory is empty")]
    EmptyReplay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionRequest {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub n_seconds: u32,
    /// Stream offset (samples) of `samples[0]`; negative while the window
    /// still reaches into artificial context before stream start.
    pub start_offset: i64,
}

impl InversionRequest {
    pub fn from_window(window: &ContextWindow) -> Self {
        Self {
            samples: window.samples.clone(),
            sample_rate: SAMPLE_RATE,
            n_seconds: window.n_seconds,
            start_offset: window.start_offset(),
        }
    }

    pub fn expected_frames(&self) -> usize {
        FRAME_RATE as usize * self.n_seconds as usize
    }

    pub fn validate(&self) -> Result<(), InversionError> {
        let want = SAMPLE_RATE as usize * self.n_seconds as usize;
        if self.sample_rate != SAMPLE_RATE || self.samples.len() != want || want == 0 {
            return Err(InversionError::BadRequest(format!(
                "{} samples at {} Hz for a {} s window",
                self.samples.len(),
                self.sample_rate,
                self.n_seconds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResponse {
    /// Window-local frames, `seq` = position in the window.
    pub frames: Vec<EmaFrame>,
}

impl InversionResponse {
    fn from_rows(rows: impl IntoIterator<Item = [f64; EMA_DIM]>) -> Self {
        Self {
            frames: rows
                .into_iter()
                .enumerate()
                .map(|(j, v)| EmaFrame::new(j as u64, v, Space::Normalized, true))
                .collect(),
        }
    }
}

pub trait Backend: Send {
    fn name(&self) -> &str;
    fn invert(&mut self, req: &InversionRequest) -> Result<InversionResponse, InversionError>;
}

/// Deterministic stand-in whose output for a frame depends only on that
/// frame's 160 samples: value `d` is `sin(2π·(d+1)·rms)`. Because of that
/// locality, any off-by-one in window or frame bookkeeping shows up as a
/// value mismatch.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn frame_for_slice(slice: &[f32]) -> [f64; EMA_DIM] {
        let energy = (slice.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>()
            / slice.len().max(1) as f64)
            .sqrt();
        std::array::from_fn(|d| (std::f64::consts::TAU * (d + 1) as f64 * energy).sin())
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn invert(&mut self, req: &InversionRequest) -> Result<InversionResponse, InversionError> {
        req.validate()?;
        Ok(InversionResponse::from_rows(
            req.samples
                .chunks_exact(SAMPLES_PER_FRAME)
                .map(MockBackend::frame_for_slice),
        ))
    }
}

/// Plays back a recorded normalized trajectory, aligned to the stream
/// timeline: window frame `j` returns trajectory frame
/// `start_offset/160 + j`, clamped to the trajectory's ends.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    frames: Vec<[f64; EMA_DIM]>,
}

impl ReplayBackend {
    pub fn new(frames: &[EmaFrame]) -> Result<Self, InversionError> {
        if frames.is_empty() {
            return Err(InversionError::EmptyReplay);
        }
        Ok(Self {
            frames: frames.iter().map(|f| f.values).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn invert(&mut self, req: &InversionRequest) -> Result<InversionResponse, InversionError> {
        req.validate()?;
        let first = req.start_offset.div_euclid(SAMPLES_PER_FRAME as i64);
        let last = self.frames.len() as i64 - 1;
        Ok(InversionResponse::from_rows((0..req.expected_frames() as i64).map(|j| {
            self.frames[(first + j).clamp(0, last) as usize]
        })))
    }
}

/// Encodes a request payload (without the length prefix).
pub fn encode_request(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * samples.len());
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    for s in samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

fn f32_at(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes a request payload into `(samples, sample_rate)`.
pub fn decode_request(payload: &[u8]) -> Result<(Vec<f32>, u32), InversionError> {
    if payload.len() < 8 {
        return Err(InversionError::RemoteProtocol("request shorter than its header".into()));
    }
    let n = u32_at(payload, 0) as usize;
    let rate = u32_at(payload, 4);
    if payload.len() != 8 + 4 * n {
        return Err(InversionError::RemoteProtocol(format!(
            "request declares {n} samples but carries {} bytes",
            payload.len() - 8
        )));
    }
    Ok(((0..n).map(|i| f32_at(payload, 8 + 4 * i)).collect(), rate))
}

pub fn encode_response(frames: &[[f32; EMA_DIM]]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * EMA_DIM * frames.len());
    buf.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(EMA_DIM as u32).to_le_bytes());
    for f in frames {
        for v in f {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_response(payload: &[u8]) -> Result<Vec<[f32; EMA_DIM]>, InversionError> {
    if payload.len() < 8 {
        return Err(InversionError::RemoteProtocol("response shorter than its header".into()));
    }
    let n = u32_at(payload, 0) as usize;
    let dim = u32_at(payload, 4) as usize;
    if dim != EMA_DIM {
        return Err(InversionError::RemoteProtocol(format!("dim {dim}, expected {EMA_DIM}")));
    }
    if payload.len() != 8 + 4 * EMA_DIM * n {
        return Err(InversionError::RemoteProtocol(format!(
            "response declares {n} frames but carries {} bytes",
            payload.len() - 8
        )));
    }
    Ok((0..n)
        .map(|j| std::array::from_fn(|d| f32_at(payload, 8 + 4 * (j * EMA_DIM + d))))
        .collect())
}

/// Writes one length-prefixed message.
pub fn write_message<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one length-prefixed message. `Ok(None)` on clean EOF before a prefix.
pub fn read_message<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_PAYLOAD {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("payload of {len} bytes exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

fn map_io(e: io::Error) -> InversionError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => InversionError::Timeout,
        io::ErrorKind::UnexpectedEof => {
            InversionError::RemoteProtocol("connection closed mid-message".into())
        }
        io::ErrorKind::InvalidData => InversionError::RemoteProtocol(e.to_string()),
        _ => InversionError::RemoteProtocol(e.to_string()),
    }
}

/// TCP client for an external model host. Keeps one connection open and
/// reconnects after any failure.
#[derive(Debug)]
pub struct RemoteBackend {
    endpoint: String,
    timeout: Duration,
    conn: Option<TcpStream>,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_timeout(endpoint, DEFAULT_REMOTE_TIMEOUT)
    }

    pub fn with_timeout(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            conn: None,
        }
    }

    fn connect(&self) -> Result<TcpStream, InversionError> {
        let unavailable = |reason: String| InversionError::RemoteUnavailable {
            addr: self.endpoint.clone(),
            reason,
        };
        let addrs: Vec<SocketAddr> = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| unavailable(e.to_string()))?
            .collect();
        let mut last = String::from("no addresses resolved");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout)).ok();
                    s.set_write_timeout(Some(self.timeout)).ok();
                    s.set_nodelay(true).ok();
                    return Ok(s);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(unavailable(last))
    }

    fn roundtrip(&mut self, req: &InversionRequest) -> Result<InversionResponse, InversionError> {
        if self.conn.is_none() {
            self.conn = Some(self.connect()?);
        }
        let conn = self.conn.as_mut().expect("connected above");
        write_message(conn, &encode_request(&req.samples, req.sample_rate)).map_err(map_io)?;
        let payload = read_message(conn)
            .map_err(map_io)?
            .ok_or_else(|| InversionError::RemoteProtocol("connection closed before reply".into()))?;
        let rows = decode_response(&payload)?;
        let expected = req.expected_frames();
        if rows.len() != expected {
            return Err(InversionError::FrameCountMismatch {
                expected,
                got: rows.len(),
            });
        }
        Ok(InversionResponse::from_rows(
            rows.into_iter().map(|r| r.map(|v| v as f64)),
        ))
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn invert(&mut self, req: &InversionRequest) -> Result<InversionResponse, InversionError> {
        req.validate()?;
        let result = self.roundtrip(req);
        if result.is_err() {
            // the stream may be mid-message; start clean next time
            self.conn = None;
        }
        result
    }
}

/// Model-host side handler: window samples in, normalized frames out.
pub type Handler = dyn Fn(&[f32], u32) -> Vec<[f32; EMA_DIM]> + Send + Sync;

/// Serves one connection until the peer hangs up.
pub fn serve_connection(mut stream: TcpStream, handler: &Handler) -> io::Result<()> {
    stream.set_nodelay(true).ok();
    while let Some(payload) = read_message(&mut stream)? {
        let (samples, rate) = decode_request(&payload)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        write_message(&mut stream, &encode_response(&handler(&samples, rate)))?;
    }
    Ok(())
}

/// Accepts connections forever on a background thread, one thread per peer.
pub fn spawn_server(listener: TcpListener, handler: Arc<Handler>) -> JoinHandle<()> {
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let handler = handler.clone();
            thread::spawn(move || {
                if let Err(e) = serve_connection(stream, &*handler) {
                    log::warn!("model host connection ended: {e}");
                }
            });
        }
    })
}

/// Handler that runs [`MockBackend`] on the host side.
pub fn mock_handler() -> Arc<Handler> {
    Arc::new(|samples: &[f32], _rate: u32| {
        samples
            .chunks_exact(SAMPLES_PER_FRAME)
            .map(|s| MockBackend::frame_for_slice(s).map(|v| v as f32))
            .collect()
    })
}
