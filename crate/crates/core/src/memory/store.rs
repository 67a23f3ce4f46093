use std::cmp::Ordering;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::MemoryError;
use crate::llm::{cosine, Embedding};

pub const STORE_SCHEMA: &str = "deskpilot-memory";
pub const STORE_VERSION: u32 = 1;

pub trait MemoryRecord: Clone + Serialize + DeserializeOwned + Send + Sync {
    const KIND: &'static str;

    fn id(&self) -> &str;
    fn key(&self) -> &str;
    fn key_embedding(&self) -> &Embedding;
    fn created_at(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub schema: String,
    pub version: u32,
    pub kind: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored<R> {
    pub score: f64,
    pub record: R,
}

/// Orders by descending score, then older first, then by id.
pub fn rank<R: MemoryRecord>(a: &Scored<R>, b: &Scored<R>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.record.created_at().cmp(&b.record.created_at()))
        .then_with(|| a.record.id().cmp(b.record.id()))
}

/// An append-only collection of records with embedding keys, optionally
/// backed by a JSON-lines file.
///
/// Readers never block each other; writes take the write lock only for the
/// in-memory push, after the line has been flushed to disk.
pub struct MemoryStore<R> {
    dim: usize,
    records: RwLock<Vec<R>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
    reads: AtomicUsize,
}

impl<R: MemoryRecord> MemoryStore<R> {
    pub fn in_memory(dim: usize) -> Self {
        Self::from_records(dim, Vec::new())
    }

    pub fn from_records(dim: usize, records: Vec<R>) -> Self {
        MemoryStore {
            dim,
            records: RwLock::new(records),
            file: None,
            path: None,
            reads: AtomicUsize::new(0),
        }
    }

    /// Opens `path`, creating it with a header when missing.
    pub fn open(path: impl AsRef<Path>, dim: usize) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        if !path.exists() {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            let header = StoreHeader {
                schema: STORE_SCHEMA.into(),
                version: STORE_VERSION,
                kind: R::KIND.into(),
                dim,
            };
            let mut f = File::create(path).map_err(|e| io_err(path, e))?;
            writeln!(
                f,
                "{}",
                serde_json::to_string(&header).expect("header serializes")
            )
            .and_then(|_| f.flush())
            .map_err(|e| io_err(path, e))?;
        }
        let loaded = load::<R>(path)?;
        if loaded.header.dim != dim {
            return Err(MemoryError::Dimension {
                expected: dim,
                actual: loaded.header.dim,
            });
        }
        Self::attach(path, loaded)
    }

    /// Opens an existing store, taking the dimension from its header.
    pub fn open_existing(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(MemoryError::MissingStore {
                path: path.display().to_string(),
            });
        }
        let loaded = load::<R>(path)?;
        Self::attach(path, loaded)
    }

    fn attach(path: &Path, loaded: Loaded<R>) -> Result<Self, MemoryError> {
        let mut file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        if let Some(len) = loaded.torn_at {
            // Cut the torn tail (or terminate an unterminated line) so the
            // next append starts on a fresh line.
            file.set_len(len).map_err(|e| io_err(path, e))?;
            if len > 0 && !ends_with_newline(path, len)? {
                writeln!(file).map_err(|e| io_err(path, e))?;
            }
        }
        Ok(MemoryStore {
            dim: loaded.header.dim,
            records: RwLock::new(loaded.records),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
            reads: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<R> {
        self.records.read().unwrap().clone()
    }

    /// Number of retrievals served so far.
    pub fn read_count(&self) -> usize {
        self.reads.load(AtomicOrdering::Relaxed)
    }

    /// Identifier for the next record: kind prefix plus a zero-padded
    /// sequence number, so ids sort in insertion order.
    pub fn next_id(&self) -> String {
        format!("{}-{:06}", &R::KIND[..1], self.len() + 1)
    }

    pub fn insert(&self, record: R) -> Result<(), MemoryError> {
        let actual = record.key_embedding().dim();
        if actual != self.dim {
            return Err(MemoryError::Dimension {
                expected: self.dim,
                actual,
            });
        }
        let mut records = self.records.write().unwrap();
        if let Some(file) = &self.file {
            let path = self.path.as_deref().expect("file-backed store has a path");
            let line = serde_json::to_string(&record).expect("records serialize");
            let mut f = file.lock().unwrap();
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| io_err(path, e))?;
        }
        records.push(record);
        Ok(())
    }

    /// The `k` records most similar to `query`, best first. Records scoring
    /// below `min_score` are dropped.
    pub fn retrieve(&self, query: &Embedding, k: usize, min_score: Option<f64>) -> Vec<Scored<R>> {
        self.reads.fetch_add(1, AtomicOrdering::Relaxed);
        if k == 0 {
            return Vec::new();
        }
        let records = self.records.read().unwrap();
        let mut scored: Vec<Scored<R>> = records
            .iter()
            .map(|r| Scored {
                score: cosine(query, r.key_embedding()),
                record: r.clone(),
            })
            .filter(|s| min_score.is_none_or(|m| s.score >= m))
            .collect();
        scored.sort_by(rank);
        scored.truncate(k);
        scored
    }
}

fn ends_with_newline(path: &Path, len: u64) -> Result<bool, MemoryError> {
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut last = [0u8; 1];
    f.seek(SeekFrom::Start(len - 1))
        .and_then(|_| f.read_exact(&mut last))
        .map_err(|e| io_err(path, e))?;
    Ok(last[0] == b'\n')
}

fn io_err(path: &Path, source: std::io::Error) -> MemoryError {
    MemoryError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Loaded<R> {
    header: StoreHeader,
    records: Vec<R>,
    /// Byte length of the intact prefix when the last line was torn.
    torn_at: Option<u64>,
}

fn load<R: MemoryRecord>(path: &Path) -> Result<Loaded<R>, MemoryError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let corrupt = |line: usize, message: String| MemoryError::Corrupt {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = Vec::new();
    let mut offset = 0usize;
    for raw in text.split_inclusive('\n') {
        lines.push((offset, raw.trim_end_matches(['\n', '\r'])));
        offset += raw.len();
    }
    let first = lines
        .first()
        .ok_or_else(|| corrupt(1, "missing header".into()))?;
    let header: StoreHeader =
        serde_json::from_str(first.1).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
    if header.schema != STORE_SCHEMA || header.version != STORE_VERSION {
        return Err(corrupt(
            1,
            format!("unsupported store {} v{}", header.schema, header.version),
        ));
    }
    if header.kind != R::KIND {
        return Err(corrupt(
            1,
            format!("store holds {} records, expected {}", header.kind, R::KIND),
        ));
    }
    let last = lines.len();
    let mut records = Vec::new();
    let mut torn_at = None;
    for (i, (start, line)) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<R>(line) {
            Ok(r) => records.push(r),
            // A crash mid-append leaves a torn final line; earlier records
            // are still good.
            Err(e) if i + 1 == last => {
                tracing::warn!(path = %path.display(), "dropping torn last record: {e}");
                torn_at = Some(*start as u64);
            }
            Err(e) => return Err(corrupt(i + 1, e.to_string())),
        }
    }
    if torn_at.is_none() && !text.ends_with('\n') {
        torn_at = Some(text.len() as u64);
    }
    Ok(Loaded {
        header,
        records,
        torn_at,
    })
}
