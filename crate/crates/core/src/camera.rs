//! Camera with separate planes: pan/tilt control over the server path, and
//! opaque frame chunks streamed over P2P when possible. Chunks can be
//! stored through a [`ChunkSink`].
//!
//! Chunk-log record layout, big-endian:
//!
//! ```text
//! len: u32 | stream_id: u64 | seq: u32 | timestamp_us: u64 | payload[len]
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rendezvous::PathKind;
use crate::sim::SimTime;

pub const CHUNKS_PER_SEC: u64 = 8;
pub const RECORD_HEADER_LEN: usize = 4 + 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("camera {0} is offline")]
    Unavailable(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("sink write failed: {0}")]
    Sink(String),
    #[error("chunk log truncated at offset {0}")]
    Truncated(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraAction {
    /// Signed pan by the magnitude.
    Rotate,
    Up,
    Down,
    Left,
    Right,
}

impl std::str::FromStr for CameraAction {
    type Err = CameraError;
    fn from_str(s: &str) -> Result<Self, CameraError> {
        Ok(match s {
            "rotate" => CameraAction::Rotate,
            "up" => CameraAction::Up,
            "down" => CameraAction::Down,
            "left" => CameraAction::Left,
            "right" => CameraAction::Right,
            other => return Err(CameraError::UnknownAction(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Orientation {
    pub pan_deg: f64,
    pub tilt_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraLimits {
    pub pan_deg: f64,
    pub tilt_deg: f64,
    /// Largest single move accepted as given; larger moves are clamped.
    pub max_step_deg: f64,
}

impl Default for CameraLimits {
    fn default() -> Self {
        CameraLimits {
            pan_deg: 170.0,
            tilt_deg: 90.0,
            max_step_deg: 360.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub orientation: Orientation,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Low,
    High,
}

impl Quality {
    pub fn bytes_per_sec(self) -> u64 {
        match self {
            Quality::Low => 8 * 1024,
            Quality::High => 64 * 1024,
        }
    }

    pub fn chunk_bytes(self) -> usize {
        (self.bytes_per_sec() / CHUNKS_PER_SEC) as usize
    }

    /// Bytes in flight over one second, the size handed to path selection.
    pub fn window_bytes(self) -> usize {
        self.chunk_bytes() * CHUNKS_PER_SEC as usize
    }

    pub fn chunk_interval() -> SimTime {
        SimTime(1_000_000 / CHUNKS_PER_SEC)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameChunk {
    pub stream_id: u64,
    pub seq: u32,
    pub timestamp: SimTime,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub stream_id: u64,
    pub quality: Quality,
    pub path: PathKind,
    pub started_at: SimTime,
    pub next_seq: u32,
}

impl StreamInfo {
    /// Produces the next chunk. Payload bytes are a deterministic pattern.
    pub fn next_chunk(&mut self, now: SimTime) -> FrameChunk {
        let seq = self.next_seq;
        self.next_seq += 1;
        let n = self.quality.chunk_bytes();
        let salt = (self.stream_id as u32).wrapping_mul(31).wrapping_add(seq);
        let payload = (0..n).map(|i| (salt.wrapping_add(i as u32) & 0xFF) as u8).collect();
        FrameChunk {
            stream_id: self.stream_id,
            seq,
            timestamp: now,
            payload,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Camera {
    pub name: String,
    pub online: bool,
    pub limits: CameraLimits,
    orientation: Orientation,
    streams: Vec<StreamInfo>,
    next_stream: u64,
}

impl Camera {
    pub fn new(name: &str) -> Self {
        Camera {
            name: name.to_string(),
            online: true,
            limits: CameraLimits::default(),
            orientation: Orientation::default(),
            streams: Vec::new(),
            next_stream: 1,
        }
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn control(&mut self, action: CameraAction, magnitude_deg: f64) -> Result<ControlOutcome, CameraError> {
        if !self.online {
            return Err(CameraError::Unavailable(self.name.clone()));
        }
        let mut warnings = Vec::new();
        let mut m = magnitude_deg;
        if !m.is_finite() {
            warnings.push(format!("magnitude {magnitude_deg} ignored"));
            m = 0.0;
        }
        let step = self.limits.max_step_deg;
        if m.abs() > step {
            warnings.push(format!("magnitude {m}° clamped to {step}°"));
            m = m.clamp(-step, step);
        }
        let (dpan, dtilt) = match action {
            CameraAction::Rotate => (m, 0.0),
            CameraAction::Right => (m, 0.0),
            CameraAction::Left => (-m, 0.0),
            CameraAction::Up => (0.0, m),
            CameraAction::Down => (0.0, -m),
        };
        let o = &mut self.orientation;
        let (pl, tl) = (self.limits.pan_deg, self.limits.tilt_deg);
        let want_pan = o.pan_deg + dpan;
        let want_tilt = o.tilt_deg + dtilt;
        o.pan_deg = want_pan.clamp(-pl, pl);
        o.tilt_deg = want_tilt.clamp(-tl, tl);
        if o.pan_deg != want_pan {
            warnings.push(format!("pan {want_pan}° clamped to {}°", o.pan_deg));
        }
        if o.tilt_deg != want_tilt {
            warnings.push(format!("tilt {want_tilt}° clamped to {}°", o.tilt_deg));
        }
        Ok(ControlOutcome {
            orientation: *o,
            warnings,
        })
    }

    pub fn start_stream(&mut self, quality: Quality, path: PathKind, now: SimTime) -> Result<&mut StreamInfo, CameraError> {
        if !self.online {
            return Err(CameraError::Unavailable(self.name.clone()));
        }
        let id = self.next_stream;
        self.next_stream += 1;
        self.streams.push(StreamInfo {
            stream_id: id,
            quality,
            path,
            started_at: now,
            next_seq: 0,
        });
        Ok(self.streams.last_mut().expect("just pushed"))
    }

    pub fn stream_mut(&mut self, id: u64) -> Option<&mut StreamInfo> {
        self.streams.iter_mut().find(|s| s.stream_id == id)
    }

    pub fn stop_stream(&mut self, id: u64) -> Option<StreamInfo> {
        let idx = self.streams.iter().position(|s| s.stream_id == id)?;
        Some(self.streams.remove(idx))
    }

    pub fn streams(&self) -> &[StreamInfo] {
        &self.streams
    }
}

pub fn encode_record(chunk: &FrameChunk) -> Vec<u8> {
    let mut out = Vec::with_capacity(RECORD_HEADER_LEN + chunk.payload.len());
    out.extend_from_slice(&(chunk.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&chunk.stream_id.to_be_bytes());
    out.extend_from_slice(&chunk.seq.to_be_bytes());
    out.extend_from_slice(&chunk.timestamp.as_micros().to_be_bytes());
    out.extend_from_slice(&chunk.payload);
    out
}

/// Parses a whole chunk log.
pub fn replay(bytes: &[u8]) -> Result<Vec<FrameChunk>, CameraError> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < bytes.len() {
        if bytes.len() - off < RECORD_HEADER_LEN {
            return Err(CameraError::Truncated(off));
        }
        let h = &bytes[off..off + RECORD_HEADER_LEN];
        let len = u32::from_be_bytes(h[0..4].try_into().expect("4")) as usize;
        let stream_id = u64::from_be_bytes(h[4..12].try_into().expect("8"));
        let seq = u32::from_be_bytes(h[12..16].try_into().expect("4"));
        let ts = u64::from_be_bytes(h[16..24].try_into().expect("8"));
        let start = off + RECORD_HEADER_LEN;
        if bytes.len() - start < len {
            return Err(CameraError::Truncated(off));
        }
        out.push(FrameChunk {
            stream_id,
            seq,
            timestamp: SimTime(ts),
            payload: bytes[start..start + len].to_vec(),
        });
        off = start + len;
    }
    Ok(out)
}

pub fn replay_file(path: &Path) -> Result<Vec<FrameChunk>, CameraError> {
    replay(&std::fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub stream_id: u64,
    pub seq: u32,
    pub offset: u64,
}

pub trait ChunkSink {
    fn append(&mut self, chunk: &FrameChunk) -> Result<IndexEntry, CameraError>;
    fn index(&self) -> &[IndexEntry];
}

/// Appends records to a file on the router's local storage.
#[derive(Debug)]
pub struct LocalFileSink {
    path: PathBuf,
    file: File,
    offset: u64,
    index: Vec<IndexEntry>,
}

impl LocalFileSink {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, CameraError> {
        let path = path.into();
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(&path)?;
        Ok(LocalFileSink {
            path,
            file,
            offset: 0,
            index: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ChunkSink for LocalFileSink {
    fn append(&mut self, chunk: &FrameChunk) -> Result<IndexEntry, CameraError> {
        let rec = encode_record(chunk);
        self.file.write_all(&rec).map_err(|e| CameraError::Sink(e.to_string()))?;
        let entry = IndexEntry {
            stream_id: chunk.stream_id,
            seq: chunk.seq,
            offset: self.offset,
        };
        self.offset += rec.len() as u64;
        self.index.push(entry);
        Ok(entry)
    }

    fn index(&self) -> &[IndexEntry] {
        &self.index
    }
}

/// Generic remote storage: records kept in memory as the remote end would.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    bytes: Vec<u8>,
    index: Vec<IndexEntry>,
}

impl MemorySink {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl ChunkSink for MemorySink {
    fn append(&mut self, chunk: &FrameChunk) -> Result<IndexEntry, CameraError> {
        let entry = IndexEntry {
            stream_id: chunk.stream_id,
            seq: chunk.seq,
            offset: self.bytes.len() as u64,
        };
        self.bytes.extend(encode_record(chunk));
        self.index.push(entry);
        Ok(entry)
    }

    fn index(&self) -> &[IndexEntry] {
        &self.index
    }
}

/// Sink that starts failing after `ok_writes` appends.
#[derive(Debug, Clone)]
pub struct FailingSink {
    pub inner: MemorySink,
    ok_writes: usize,
}

impl FailingSink {
    pub fn new(ok_writes: usize) -> Self {
        FailingSink {
            inner: MemorySink::default(),
            ok_writes,
        }
    }
}

impl ChunkSink for FailingSink {
    fn append(&mut self, chunk: &FrameChunk) -> Result<IndexEntry, CameraError> {
        if self.inner.index.len() >= self.ok_writes {
            return Err(CameraError::Sink("remote store rejected write".into()));
        }
        self.inner.append(chunk)
    }

    fn index(&self) -> &[IndexEntry] {
        self.inner.index()
    }
}

/// Receiver-side sequence tracking for one stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapDetector {
    pub last: Option<u32>,
    pub received: u64,
    pub gaps: u64,
    /// Chunks arriving with a seq not above the last one (discarded).
    pub out_of_order: u64,
}

impl GapDetector {
    /// Returns the number of chunks missing just before `seq`.
    pub fn observe(&mut self, seq: u32) -> u64 {
        let missing = match self.last {
            Some(l) if seq <= l => {
                self.out_of_order += 1;
                return 0;
            }
            Some(l) => (seq - l - 1) as u64,
            None => seq as u64,
        };
        self.last = Some(seq);
        self.received += 1;
        self.gaps += missing;
        missing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pan_is_additive_and_clamped() {
        let mut c = Camera::new("cam");
        let out = c.control(CameraAction::Rotate, 30.0).unwrap();
        assert_eq!(out.orientation.pan_deg, 30.0);
        assert!(out.warnings.is_empty());
        let mut c = Camera::new("cam");
        let out = c.control(CameraAction::Right, 200.0).unwrap();
        assert_eq!(out.orientation.pan_deg, 170.0);
        assert_eq!(out.warnings.len(), 1);
        let out = c.control(CameraAction::Down, 120.0).unwrap();
        assert_eq!(out.orientation.tilt_deg, -90.0);
        let out = c.control(CameraAction::Left, 1000.0).unwrap();
        assert_eq!(out.orientation.pan_deg, -170.0);
        assert_eq!(out.warnings.len(), 2);
    }

    #[test]
    fn offline_camera_is_unavailable() {
        let mut c = Camera::new("cam");
        c.online = false;
        assert!(matches!(c.control(CameraAction::Up, 1.0), Err(CameraError::Unavailable(_))));
        assert!(matches!(
            c.start_stream(Quality::Low, PathKind::P2pDirect, SimTime::ZERO),
            Err(CameraError::Unavailable(_))
        ));
    }

    #[test]
    fn presets_are_large_payloads() {
        assert_eq!(Quality::Low.chunk_bytes(), 1024);
        assert_eq!(Quality::High.chunk_bytes(), 8192);
        assert!(Quality::Low.window_bytes() > crate::rendezvous::DEFAULT_SIZE_THRESHOLD);
    }

    #[test]
    fn record_layout() {
        let c = FrameChunk {
            stream_id: 0x0102030405060708,
            seq: 9,
            timestamp: SimTime(0x10),
            payload: vec![0xAA, 0xBB],
        };
        assert_eq!(
            encode_record(&c),
            vec![0, 0, 0, 2, 1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 9, 0, 0, 0, 0, 0, 0, 0, 0x10, 0xAA, 0xBB]
        );
    }

    #[test]
    fn local_sink_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cam = Camera::new("cam");
        let stream = cam.start_stream(Quality::Low, PathKind::P2pDirect, SimTime::ZERO).unwrap();
        let chunks: Vec<FrameChunk> = (0..100).map(|i| stream.next_chunk(Quality::chunk_interval().mul(i))).collect();
        let mut sink = LocalFileSink::create(dir.path().join("cam.log")).unwrap();
        for c in &chunks {
            sink.append(c).unwrap();
        }
        assert_eq!(sink.index().len(), 100);
        assert_eq!(sink.index()[1].offset, (RECORD_HEADER_LEN + 1024) as u64);
        assert_eq!(replay_file(sink.path()).unwrap(), chunks);
    }

    #[test]
    fn failing_sink_surfaces_error() {
        let mut sink = FailingSink::new(2);
        let mut s = StreamInfo {
            stream_id: 1,
            quality: Quality::Low,
            path: PathKind::Relay,
            started_at: SimTime::ZERO,
            next_seq: 0,
        };
        for _ in 0..2 {
            sink.append(&s.next_chunk(SimTime::ZERO)).unwrap();
        }
        assert!(matches!(sink.append(&s.next_chunk(SimTime::ZERO)), Err(CameraError::Sink(_))));
        assert_eq!(s.next_seq, 3);
    }

    #[test]
    fn truncated_log_is_an_error() {
        let mut s = StreamInfo {
            stream_id: 1,
            quality: Quality::Low,
            path: PathKind::Relay,
            started_at: SimTime::ZERO,
            next_seq: 0,
        };
        let rec = encode_record(&s.next_chunk(SimTime::ZERO));
        assert!(matches!(replay(&rec[..rec.len() - 1]), Err(CameraError::Truncated(0))));
    }

    #[test]
    fn gap_detector_counts_missing() {
        let mut g = GapDetector::default();
        for s in [0, 1, 3, 4, 7, 6] {
            g.observe(s);
        }
        assert_eq!(g.gaps, 3);
        assert_eq!(g.received, 5);
        assert_eq!(g.out_of_order, 1);
    }
}
