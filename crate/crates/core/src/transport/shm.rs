//! Append-only shared-memory frame log.
//!
//! One writer appends fixed 60-byte records; any number of readers poll it
//! without locks. Nothing is ever overwritten, so a reader that falls behind
//! catches up from wherever it left off.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "EMASTRM1"
//!      8     4  version (1)
//!     12     4  record size (60)
//!     16     4  dim (12)
//!     20     4  frame rate (100)
//!     24     4  value space (0 = millimeters, 1 = normalized)
//!     28    28  reserved, zero
//!     56     8  published_count
//!     64   60·i record i: u64 seq | u8 speech | 3 pad | f32 × 12
//! ```
//!
//! All fields little-endian. `published_count` is stored with release
//! ordering after the record bytes, and loaded with acquire ordering before
//! any record is read.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use memmap2::{Mmap, MmapMut};
use thiserror::Error;

use crate::ema::{EmaFrame, Space, EMA_DIM, FRAME_RATE};

pub const MAGIC: &[u8; 8] = b"EMASTRM1";
pub const VERSION: u32 = 1;
pub const HEADER_SIZE: usize = 64;
pub const RECORD_SIZE: usize = 60;
pub const COUNT_OFFSET: usize = 56;
const SPACE_OFFSET: usize = 24;
/// 5 MiB.
pub const DEFAULT_CAPACITY_BYTES: usize = 5 << 20;

#[derive(Debug, Error)]
pub enum ShmError {
    #[error("shared buffer full: all {capacity} records used")]
    BufferFull { capacity: u64 },
    #[error("not a frame buffer (bad magic)")]
    BadMagic,
    #[error("unsupported buffer version {0}")]
    BadVersion(u32),
    #[error("corrupt buffer header: {0}")]
    BadHeader(String),
    #[error("buffer holds {buffer} frames, got a {frame} frame")]
    WrongSpace { buffer: Space, frame: Space },
    #[error("invalid shared memory name {0:?}")]
    InvalidName(String),
    #[error("capacity of {0} bytes cannot hold a header and one record")]
    TooSmall(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of records a buffer of `capacity_bytes` holds.
pub fn max_records(capacity_bytes: usize) -> u64 {
    (capacity_bytes.saturating_sub(HEADER_SIZE) / RECORD_SIZE) as u64
}

/// Backing path for a named buffer: `/dev/shm/<name>` where available,
/// otherwise the system temp directory.
pub fn shm_path(name: &str) -> Result<PathBuf, ShmError> {
    let name = name.trim_start_matches('/');
    if name.is_empty() || name.contains('/') || name.contains('\0') || name == "." || name == ".." {
        return Err(ShmError::InvalidName(name.to_string()));
    }
    let dev_shm = Path::new("/dev/shm");
    let dir = if dev_shm.is_dir() {
        dev_shm.to_path_buf()
    } else {
        std::env::temp_dir()
    };
    Ok(dir.join(name))
}

fn space_code(space: Space) -> u32 {
    match space {
        Space::Millimeters => 0,
        Space::Normalized => 1,
    }
}

fn le_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

/// `published_count` viewed as an atomic.
///
/// # Safety
/// `base` must point at a live mapping of at least `HEADER_SIZE` bytes. Map
/// bases are page aligned, so offset 56 is 8-byte aligned.
unsafe fn count_cell<'a>(base: *const u8) -> &'a AtomicU64 {
    &*(base.add(COUNT_OFFSET) as *const AtomicU64)
}

pub fn encode_record(frame: &EmaFrame, out: &mut [u8]) {
    out[0..8].copy_from_slice(&frame.seq.to_le_bytes());
    out[8] = frame.speech as u8;
    out[9..12].fill(0);
    for (d, v) in frame.values.iter().enumerate() {
        let at = 12 + 4 * d;
        out[at..at + 4].copy_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn decode_record(buf: &[u8], space: Space) -> EmaFrame {
    let seq = u64::from_le_bytes(buf[0..8].try_into().expect("8 bytes"));
    let values = std::array::from_fn(|d| {
        let at = 12 + 4 * d;
        f32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes")) as f64
    });
    EmaFrame::new(seq, values, space, buf[8] != 0)
}

/// The single writer of a buffer.
pub struct ShmWriter {
    map: MmapMut,
    path: PathBuf,
    space: Space,
    capacity: u64,
    count: u64,
}

impl ShmWriter {
    /// Creates (or truncates) the named buffer with the default 5 MiB size.
    pub fn create_named(name: &str, space: Space) -> Result<Self, ShmError> {
        Self::create(shm_path(name)?, DEFAULT_CAPACITY_BYTES, space)
    }

    pub fn create(path: impl Into<PathBuf>, capacity_bytes: usize, space: Space) -> Result<Self, ShmError> {
        if max_records(capacity_bytes) == 0 {
            return Err(ShmError::TooSmall(capacity_bytes));
        }
        let path = path.into();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        file.set_len(capacity_bytes as u64)?;
        // SAFETY: the file was just sized; this process is its only writer.
        let mut map = unsafe { MmapMut::map_mut(&file)? };
        map[..HEADER_SIZE].fill(0);
        map[0..8].copy_from_slice(MAGIC);
        map[8..12].copy_from_slice(&VERSION.to_le_bytes());
        map[12..16].copy_from_slice(&(RECORD_SIZE as u32).to_le_bytes());
        map[16..20].copy_from_slice(&(EMA_DIM as u32).to_le_bytes());
        map[20..24].copy_from_slice(&FRAME_RATE.to_le_bytes());
        map[SPACE_OFFSET..SPACE_OFFSET + 4].copy_from_slice(&space_code(space).to_le_bytes());
        // SAFETY: mapping is live and larger than the header.
        unsafe { count_cell(map.as_ptr()) }.store(0, Ordering::Release);
        Ok(Self {
            map,
            path,
            space,
            capacity: max_records(capacity_bytes),
            count: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn published_count(&self) -> u64 {
        self.count
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    fn put(&mut self, frame: &EmaFrame) -> Result<(), ShmError> {
        if frame.space != self.space {
            return Err(ShmError::WrongSpace {
                buffer: self.space,
                frame: frame.space,
            });
        }
        if self.count >= self.capacity {
            return Err(ShmError::BufferFull {
                capacity: self.capacity,
            });
        }
        let at = HEADER_SIZE + self.count as usize * RECORD_SIZE;
        encode_record(frame, &mut self.map[at..at + RECORD_SIZE]);
        self.count += 1;
        Ok(())
    }

    fn publish(&self) {
        // SAFETY: mapping is live for `self`'s lifetime.
        unsafe { count_cell(self.map.as_ptr()) }.store(self.count, Ordering::Release);
    }

    /// Appends one frame and publishes it.
    pub fn write(&mut self, frame: &EmaFrame) -> Result<(), ShmError> {
        self.put(frame)?;
        self.publish();
        Ok(())
    }

    /// Appends several frames, publishing once after the last record. If the
    /// buffer fills part-way, the frames that fit are published.
    pub fn write_all(&mut self, frames: &[EmaFrame]) -> Result<(), ShmError> {
        let result = frames.iter().try_for_each(|f| self.put(f));
        self.publish();
        result
    }

    /// Removes the backing file. Readers that already mapped it keep working.
    pub fn unlink(self) -> Result<(), ShmError> {
        let path = self.path.clone();
        drop(self);
        std::fs::remove_file(path)?;
        Ok(())
    }
}

/// Decoded header, for inspection tools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShmHeader {
    pub version: u32,
    pub record_size: u32,
    pub dim: u32,
    pub frame_rate: u32,
    pub space: Space,
    pub published_count: u64,
    pub capacity: u64,
}

/// A lock-free poller over a buffer.
pub struct ShmReader {
    map: Mmap,
    space: Space,
    capacity: u64,
}

impl ShmReader {
    pub fn open_named(name: &str) -> Result<Self, ShmError> {
        Self::open(shm_path(name)?)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ShmError> {
        let file = File::open(path)?;
        // SAFETY: read-only mapping; the writer only appends past the
        // published count, which we never read beyond.
        let map = unsafe { Mmap::map(&file)? };
        if map.len() < HEADER_SIZE || &map[0..8] != MAGIC {
            return Err(ShmError::BadMagic);
        }
        let version = le_u32(&map, 8);
        if version != VERSION {
            return Err(ShmError::BadVersion(version));
        }
        let (rs, dim) = (le_u32(&map, 12), le_u32(&map, 16));
        if rs as usize != RECORD_SIZE || dim as usize != EMA_DIM {
            return Err(ShmError::BadHeader(format!("record size {rs}, dim {dim}")));
        }
        let space = match le_u32(&map, SPACE_OFFSET) {
            0 => Space::Millimeters,
            1 => Space::Normalized,
            other => return Err(ShmError::BadHeader(format!("space code {other}"))),
        };
        let capacity = max_records(map.len());
        Ok(Self { map, space, capacity })
    }

    pub fn published_count(&self) -> u64 {
        // SAFETY: mapping is live and at least HEADER_SIZE long (checked in open).
        let n = unsafe { count_cell(self.map.as_ptr()) }.load(Ordering::Acquire);
        n.min(self.capacity)
    }

    pub fn header(&self) -> ShmHeader {
        ShmHeader {
            version: le_u32(&self.map, 8),
            record_size: le_u32(&self.map, 12),
            dim: le_u32(&self.map, 16),
            frame_rate: le_u32(&self.map, 20),
            space: self.space,
            published_count: self.published_count(),
            capacity: self.capacity,
        }
    }

    pub fn record(&self, index: u64) -> Option<EmaFrame> {
        (index < self.published_count()).then(|| self.decode(index))
    }

    fn decode(&self, index: u64) -> EmaFrame {
        let at = HEADER_SIZE + index as usize * RECORD_SIZE;
        decode_record(&self.map[at..at + RECORD_SIZE], self.space)
    }

    /// Every record in `[last_seen, published_count)`. Never blocks; empty
    /// when nothing new has been published.
    pub fn poll(&self, last_seen: u64) -> Vec<EmaFrame> {
        let count = self.published_count();
        (last_seen.min(count)..count).map(|i| self.decode(i)).collect()
    }
}
