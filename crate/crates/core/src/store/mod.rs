//! Append-only, checksummed row logs with point-in-time snapshots.
//!
//! A store is a directory holding one `<stream>.log` per stream and a
//! `manifest.json` with row and byte counts. Every row is one frame:
//!
//! ```text
//! u32 LE  payload length
//! u32 LE  CRC-32 (IEEE) of the payload
//! payload: u8 schema version (1) | u8 stream tag | row body
//! ```
//!
//! Row bodies are little-endian; strings are a u16 byte length followed by
//! UTF-8. `docs/store-format.md` lists every body field by field.
//!
//! Opening a store scans each log. A final frame that is incomplete or fails
//! its checksum is a torn append: it is cut off and reported in
//! [`RecordStore::recovered`]. A bad frame followed by further data is
//! corruption and fails the open.

mod codec;
mod rows;

pub use rows::Row;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{SmartDatum, Threshold, ToolUsagePeriod};
use crate::kpi::DecisionAidIndicator;
use crate::monitor::MonitoringRecord;
use crate::synth::SignalBlock;

/// Row schema version written in every payload.
pub const SCHEMA_VERSION: u8 = 1;

/// Version of the CSV column layouts; part of exported file names.
pub const CSV_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: u32 = 1;
const FRAME_HEADER: u64 = 8;
const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Monitoring,
    Periods,
    SmartData,
    Thresholds,
    Indicators,
    /// Raw signal blocks; only written when a dump is requested.
    RawSignal,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::Monitoring,
        Stream::Periods,
        Stream::SmartData,
        Stream::Thresholds,
        Stream::Indicators,
        Stream::RawSignal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Monitoring => "monitoring",
            Stream::Periods => "periods",
            Stream::SmartData => "smart_data",
            Stream::Thresholds => "thresholds",
            Stream::Indicators => "indicators",
            Stream::RawSignal => "raw_signal",
        }
    }

    /// Byte identifying the stream inside each payload.
    pub fn tag(self) -> u8 {
        match self {
            Stream::Monitoring => 1,
            Stream::Periods => 2,
            Stream::SmartData => 3,
            Stream::Thresholds => 4,
            Stream::Indicators => 5,
            Stream::RawSignal => 6,
        }
    }

    fn file_name(self) -> String {
        format!("{}.log", self.name())
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stream {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stream::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| StoreError::UnknownStream(s.to_string()))
    }
}

/// Why a row was refused.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {reason}")]
pub struct FieldError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("row ends inside {0}")]
    Truncated(&'static str),
    #[error("{0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("unknown tag {tag} in {field}")]
    BadTag { field: &'static str, tag: u8 },
    #[error("schema version {0} is not supported")]
    Version(u8),
    #[error("row belongs to stream tag {found}, expected {expected}")]
    WrongStream { expected: u8, found: u8 },
    #[error("{0} unread bytes after row")]
    TrailingBytes(usize),
    #[error("indicator json: {0}")]
    Json(String),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("{stream} row {row}: schema violation in {source}")]
    Schema {
        stream: Stream,
        row: usize,
        #[source]
        source: FieldError,
    },
    #[error("{stream}: {source}")]
    Io {
        stream: String,
        #[source]
        source: io::Error,
    },
    #[error("{stream}: corrupt frame at byte {offset}: {reason}")]
    Corrupt {
        stream: Stream,
        offset: u64,
        reason: String,
    },
    #[error("{stream} row {row}: {source}")]
    Decode {
        stream: Stream,
        row: u64,
        #[source]
        source: DecodeError,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(stream: impl fmt::Display) -> impl FnOnce(io::Error) -> StoreError {
    move |source| StoreError::Io {
        stream: stream.to_string(),
        source,
    }
}

/// Row and byte counts of one stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub rows: u64,
    pub bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    schema_version: u8,
    streams: BTreeMap<String, StreamStats>,
}

/// A torn final frame cut off while opening.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub stream: Stream,
    /// Length of the log after truncation.
    pub kept_bytes: u64,
    pub dropped_bytes: u64,
}

/// Selection applied while reading a snapshot. Time bounds are `[from, to)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowFilter {
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub tool: Option<String>,
    pub program: Option<String>,
    pub workpiece: Option<String>,
    pub period_id: Option<String>,
    pub metric_id: Option<String>,
}

impl RowFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn time(from: f64, to: f64) -> Self {
        Self {
            from: Some(from),
            to: Some(to),
            ..Self::default()
        }
    }
}

/// Immutable rows of one stream as of the moment the snapshot was taken.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    rows: Arc<Vec<T>>,
    as_of: StreamStats,
}

impl<T> Snapshot<T> {
    /// Stream size the snapshot was read up to.
    pub fn as_of(&self) -> StreamStats {
        self.as_of
    }

    pub fn rows(&self) -> &[T] {
        &self.rows
    }
}

impl<T: Clone> Snapshot<T> {
    pub fn to_vec(&self) -> Vec<T> {
        self.rows.as_ref().clone()
    }
}

impl<T> Deref for Snapshot<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// `fsync` log and manifest after every append.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { sync: true }
    }
}

/// Single-writer store; snapshots may be taken at any time through `&self`.
#[derive(Debug)]
pub struct RecordStore {
    root: PathBuf,
    options: StoreOptions,
    stats: BTreeMap<Stream, StreamStats>,
    writers: BTreeMap<Stream, File>,
    recovered: Vec<Recovery>,
}

impl RecordStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(root, StoreOptions::default())
    }

    /// Opens or creates the store at `root`, truncating torn tails.
    pub fn open_with(root: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err("store root"))?;
        let manifest_path = root.join(MANIFEST);
        if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(io_err(MANIFEST))?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| StoreError::Manifest(e.to_string()))?;
            if m.format != MANIFEST_FORMAT {
                return Err(StoreError::Manifest(format!("unsupported format {}", m.format)));
            }
        }
        let mut store = Self {
            root,
            options,
            stats: BTreeMap::new(),
            writers: BTreeMap::new(),
            recovered: Vec::new(),
        };
        for stream in Stream::ALL {
            let stats = store.scan(stream)?;
            store.stats.insert(stream, stats);
        }
        store.write_manifest()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Torn tails cut off by the last open.
    pub fn recovered(&self) -> &[Recovery] {
        &self.recovered
    }

    pub fn log_path(&self, stream: Stream) -> PathBuf {
        self.root.join(stream.file_name())
    }

    fn scan(&mut self, stream: Stream) -> Result<StreamStats, StoreError> {
        let path = self.log_path(stream);
        let file = match OpenOptions::new().read(true).write(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(StreamStats::default()),
            Err(e) => return Err(io_err(stream)(e)),
        };
        let len = file.metadata().map_err(io_err(stream))?.len();
        let mut reader = BufReader::with_capacity(1 << 20, &file);
        let mut stats = StreamStats::default();
        let mut payload = Vec::new();
        let torn = loop {
            let offset = stats.bytes;
            if offset == len {
                break None;
            }
            let remaining = len - offset;
            if remaining < FRAME_HEADER {
                break Some("incomplete header".to_string());
            }
            let mut header = [0u8; 8];
            reader.read_exact(&mut header).map_err(io_err(stream))?;
            let n = u32::from_le_bytes(header[..4].try_into().unwrap());
            let crc = u32::from_le_bytes(header[4..].try_into().unwrap());
            let frame_end = offset + FRAME_HEADER + n as u64;
            if frame_end > len {
                break Some(format!("frame of {n} bytes runs past end of log"));
            }
            if n > MAX_PAYLOAD {
                return Err(StoreError::Corrupt {
                    stream,
                    offset,
                    reason: format!("implausible frame length {n}"),
                });
            }
            payload.resize(n as usize, 0);
            reader.read_exact(&mut payload).map_err(io_err(stream))?;
            if crc32fast::hash(&payload) != crc {
                if frame_end == len {
                    break Some("checksum mismatch in final frame".to_string());
                }
                return Err(StoreError::Corrupt {
                    stream,
                    offset,
                    reason: "checksum mismatch".into(),
                });
            }
            stats.rows += 1;
            stats.bytes = frame_end;
        };
        drop(reader);
        if torn.is_some() {
            file.set_len(stats.bytes).map_err(io_err(stream))?;
            if self.options.sync {
                file.sync_all().map_err(io_err(stream))?;
            }
            self.recovered.push(Recovery {
                stream,
                kept_bytes: stats.bytes,
                dropped_bytes: len - stats.bytes,
            });
        }
        Ok(stats)
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let m = Manifest {
            format: MANIFEST_FORMAT,
            schema_version: SCHEMA_VERSION,
            streams: self.stats.iter().map(|(s, st)| (s.name().to_string(), *st)).collect(),
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes(), self.options.sync).map_err(io_err(MANIFEST))
    }

    /// Appends `rows` to their stream; either every row is validated and
    /// written or none is. Returns the number of rows written.
    pub fn append<T: Row>(&mut self, rows: &[T]) -> Result<usize, StoreError> {
        let stream = T::STREAM;
        for (i, r) in rows.iter().enumerate() {
            r.validate().map_err(|source| StoreError::Schema {
                stream,
                row: i,
                source,
            })?;
        }
        if rows.is_empty() {
            return Ok(0);
        }
        let mut buf = Vec::with_capacity(rows.len() * 256);
        let mut payload = Vec::with_capacity(256);
        for r in rows {
            payload.clear();
            payload.push(SCHEMA_VERSION);
            payload.push(stream.tag());
            r.encode_body(&mut payload);
            buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            buf.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
            buf.extend_from_slice(&payload);
        }
        let path = self.log_path(stream);
        let committed = self.stats[&stream].bytes;
        let file = match self.writers.entry(stream) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                let f = OpenOptions::new()
                    .create(true)
                    .truncate(false)
                    .write(true)
                    .open(&path)
                    .map_err(io_err(stream))?;
                e.insert(f)
            }
        };
        let write = |f: &mut File| -> io::Result<()> {
            f.seek(SeekFrom::Start(committed))?;
            f.write_all(&buf)?;
            Ok(())
        };
        if let Err(e) = write(file) {
            // Leave the log at its committed length so a retry does not follow garbage.
            let _ = file.set_len(committed);
            return Err(io_err(stream)(e));
        }
        if self.options.sync {
            file.sync_data().map_err(io_err(stream))?;
        }
        let st = self.stats.get_mut(&stream).expect("stream registered");
        st.rows += rows.len() as u64;
        st.bytes += buf.len() as u64;
        self.write_manifest()?;
        Ok(rows.len())
    }

    pub fn stats(&self, stream: Stream) -> StreamStats {
        self.stats[&stream]
    }

    pub fn stats_by_name(&self, name: &str) -> Result<StreamStats, StoreError> {
        Ok(self.stats(name.parse()?))
    }

    /// Reads the committed rows of `T`'s stream that pass `filter`.
    pub fn snapshot<T: Row>(&self, filter: &RowFilter) -> Result<Snapshot<T>, StoreError> {
        let stream = T::STREAM;
        let as_of = self.stats(stream);
        let mut rows = Vec::new();
        self.for_each_row::<T>(as_of, |row| {
            if row.matches(filter) {
                rows.push(row);
            }
            Ok(())
        })?;
        Ok(Snapshot {
            rows: Arc::new(rows),
            as_of,
        })
    }

    fn for_each_row<T: Row>(
        &self,
        as_of: StreamStats,
        mut f: impl FnMut(T) -> Result<(), StoreError>,
    ) -> Result<(), StoreError> {
        let stream = T::STREAM;
        if as_of.rows == 0 {
            return Ok(());
        }
        let file = File::open(self.log_path(stream)).map_err(io_err(stream))?;
        let mut reader = BufReader::with_capacity(1 << 20, file.take(as_of.bytes));
        let mut payload = Vec::new();
        for row in 0..as_of.rows {
            let mut header = [0u8; 8];
            reader.read_exact(&mut header).map_err(io_err(stream))?;
            let n = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
            payload.resize(n, 0);
            reader.read_exact(&mut payload).map_err(io_err(stream))?;
            let decode = || -> Result<T, DecodeError> {
                let mut r = codec::Reader::new(&payload);
                let version = r.u8("schema_version")?;
                if version != SCHEMA_VERSION {
                    return Err(DecodeError::Version(version));
                }
                let tag = r.u8("stream")?;
                if tag != stream.tag() {
                    return Err(DecodeError::WrongStream {
                        expected: stream.tag(),
                        found: tag,
                    });
                }
                let value = T::decode_body(&mut r)?;
                r.finish()?;
                Ok(value)
            };
            let value = decode().map_err(|source| StoreError::Decode { stream, row, source })?;
            f(value)?;
        }
        Ok(())
    }

    /// Writes `T`'s stream as CSV with a header row; returns data rows written.
    pub fn export_csv<T: Row>(&self, out: impl Write) -> Result<u64, StoreError> {
        let stream = T::STREAM;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| StoreError::Io {
            stream: stream.to_string(),
            source: io::Error::other(e),
        };
        w.write_record(T::csv_header()).map_err(csv_err)?;
        let mut n = 0u64;
        self.for_each_row::<T>(self.stats(stream), |row| {
            for rec in row.csv_records() {
                w.write_record(&rec).map_err(csv_err)?;
                n += 1;
            }
            Ok(())
        })?;
        w.flush().map_err(io_err(stream))?;
        Ok(n)
    }

    /// Exports every non-empty stream to `<dir>/<stream>.v<CSV_VERSION>.csv`.
    pub fn export_all_csv(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err("csv export"))?;
        let mut written = Vec::new();
        for stream in Stream::ALL {
            if self.stats(stream).rows == 0 {
                continue;
            }
            let path = dir.join(format!("{}.v{CSV_VERSION}.csv", stream.name()));
            let file = BufWriter::new(File::create(&path).map_err(io_err(stream))?);
            match stream {
                Stream::Monitoring => self.export_csv::<MonitoringRecord>(file)?,
                Stream::Periods => self.export_csv::<ToolUsagePeriod>(file)?,
                Stream::SmartData => self.export_csv::<SmartDatum>(file)?,
                Stream::Thresholds => self.export_csv::<Threshold>(file)?,
                Stream::Indicators => self.export_csv::<DecisionAidIndicator>(file)?,
                Stream::RawSignal => self.export_csv::<SignalBlock>(file)?,
            };
            written.push(path);
        }
        Ok(written)
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8], sync: bool) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        if sync {
            f.sync_all()?;
        }
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests;
