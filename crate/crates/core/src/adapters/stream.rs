use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::check_path_component;
use crate::error::{HubError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StreamLine {
    pub timestamp_utc_ms: i64,
    pub text: String,
}

impl StreamLine {
    /// On-disk form, without the trailing newline.
    pub fn render(&self) -> String {
        format!("{}\t{}", self.timestamp_utc_ms, self.text)
    }

    pub fn parse(line: &str) -> Option<Self> {
        let (ts, text) = line.split_once('\t')?;
        Some(Self {
            timestamp_utc_ms: ts.parse().ok()?,
            text: text.to_owned(),
        })
    }
}

/// Append-only named line streams with dense zero-based offsets.
pub trait DataStreamStore: Send + Sync {
    /// Appends one record; durable before returning. Returns its offset.
    fn append(&self, stream: &str, timestamp_utc_ms: i64, text: &str) -> Result<u64>;
    /// Records `from..` in append order. Unknown streams read as empty.
    fn read(&self, stream: &str, from: u64) -> Result<Vec<StreamLine>>;
}

fn check_stream_args(stream: &str, text: Option<&str>) -> Result<()> {
    check_path_component(stream).map_err(|_| HubError::InvalidName(stream.to_owned()))?;
    if let Some(text) = text {
        if text.contains(['\n', '\r']) {
            return Err(HubError::InvalidText("text must be a single line".into()));
        }
    }
    Ok(())
}

/// One file per stream at `root/{name}.log`.
pub struct FileStreamStore {
    root: PathBuf,
    // line count per stream, loaded on first touch; the mutex serializes appends
    streams: Mutex<HashMap<String, Arc<Mutex<Option<u64>>>>>,
}

impl FileStreamStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            streams: Mutex::new(HashMap::new()),
        })
    }

    pub fn path_of(&self, stream: &str) -> PathBuf {
        self.root.join(format!("{stream}.log"))
    }

    fn slot(&self, stream: &str) -> Arc<Mutex<Option<u64>>> {
        self.streams
            .lock()
            .entry(stream.to_owned())
            .or_default()
            .clone()
    }

    fn count_lines(&self, stream: &str) -> Result<u64> {
        match fs::File::open(self.path_of(stream)) {
            Ok(f) => Ok(BufReader::new(f).lines().count() as u64),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(0),
            Err(e) => Err(e.into()),
        }
    }
}

impl DataStreamStore for FileStreamStore {
    fn append(&self, stream: &str, timestamp_utc_ms: i64, text: &str) -> Result<u64> {
        check_stream_args(stream, Some(text))?;
        let slot = self.slot(stream);
        let mut count = slot.lock();
        let offset = match *count {
            Some(n) => n,
            None => self.count_lines(stream)?,
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path_of(stream))?;
        let line = StreamLine {
            timestamp_utc_ms,
            text: text.to_owned(),
        };
        f.write_all(format!("{}\n", line.render()).as_bytes())?;
        f.sync_data()?;
        *count = Some(offset + 1);
        Ok(offset)
    }

    fn read(&self, stream: &str, from: u64) -> Result<Vec<StreamLine>> {
        check_stream_args(stream, None)?;
        let slot = self.slot(stream);
        let _guard = slot.lock();
        let f = match fs::File::open(self.path_of(stream)) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines().skip(from as usize) {
            let line = line?;
            let parsed = StreamLine::parse(&line).ok_or_else(|| {
                HubError::StoreFailure(format!("corrupt line in stream {stream}"))
            })?;
            out.push(parsed);
        }
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct MemoryStreamStore {
    streams: Mutex<HashMap<String, Vec<StreamLine>>>,
}

impl MemoryStreamStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl DataStreamStore for MemoryStreamStore {
    fn append(&self, stream: &str, timestamp_utc_ms: i64, text: &str) -> Result<u64> {
        check_stream_args(stream, Some(text))?;
        let mut streams = self.streams.lock();
        let lines = streams.entry(stream.to_owned()).or_default();
        lines.push(StreamLine {
            timestamp_utc_ms,
            text: text.to_owned(),
        });
        Ok(lines.len() as u64 - 1)
    }

    fn read(&self, stream: &str, from: u64) -> Result<Vec<StreamLine>> {
        check_stream_args(stream, None)?;
        Ok(self
            .streams
            .lock()
            .get(stream)
            .map(|lines| lines.iter().skip(from as usize).cloned().collect())
            .unwrap_or_default())
    }
}
