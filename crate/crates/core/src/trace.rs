//! JSON-lines run traces.
//!
//! Every run owns one [`Tracer`]. Events are totally ordered by `seq`. Wall
//! clock values live only in `ts` and `elapsed_ms`, so two runs of the same
//! scripted scenario compare equal after [`TraceEvent::without_timing`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    /// First event of every run; carries the effective configuration.
    RunStart,
    ModelCall,
    Retrieval,
    /// A grounded action proposed by the worker, with its validation result.
    Action,
    EnvStep,
    Replan,
    Save,
    Warning,
    SubtaskStart,
    SubtaskEnd,
    RunEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run_id: String,
    pub seq: u64,
    /// Unix milliseconds.
    pub ts: u64,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
    pub payload: Value,
}

impl TraceEvent {
    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> TraceEvent {
        TraceEvent {
            ts: 0,
            elapsed_ms: None,
            ..self.clone()
        }
    }

    pub fn payload_str(&self, field: &str) -> Option<&str> {
        self.payload.get(field).and_then(Value::as_str)
    }
}

pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Inner {
    seq: u64,
    events: Vec<TraceEvent>,
    sink: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

/// Shared handle to one run's trace. Cloning is cheap; all clones append to
/// the same ordered log.
#[derive(Clone)]
pub struct Tracer {
    run_id: Arc<str>,
    full: bool,
    inner: Arc<Mutex<Inner>>,
}

impl std::fmt::Debug for Tracer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracer")
            .field("run_id", &self.run_id)
            .field("full", &self.full)
            .finish()
    }
}

impl Tracer {
    /// In-memory tracer.
    pub fn new(run_id: impl Into<String>) -> Self {
        Tracer {
            run_id: Arc::from(run_id.into()),
            full: false,
            inner: Arc::new(Mutex::new(Inner {
                seq: 0,
                events: Vec::new(),
                sink: None,
                path: None,
            })),
        }
    }

    /// Tracer that also writes each event to `path` as it is recorded.
    pub fn to_file(run_id: impl Into<String>, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = File::create(path)?;
        let tracer = Tracer::new(run_id);
        {
            let mut inner = tracer.inner.lock().unwrap();
            inner.sink = Some(BufWriter::new(file));
            inner.path = Some(path.to_path_buf());
        }
        Ok(tracer)
    }

    /// Include full prompt and reply text in model-call events.
    pub fn with_full_text(mut self, full: bool) -> Self {
        self.full = full;
        self
    }

    pub fn full_text(&self) -> bool {
        self.full
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.inner.lock().unwrap().path.clone()
    }

    pub fn record(&self, kind: TraceKind, payload: Value) {
        self.record_timed(kind, payload, None);
    }

    pub fn record_timed(&self, kind: TraceKind, payload: Value, elapsed_ms: Option<u64>) {
        let mut inner = self.inner.lock().unwrap();
        let event = TraceEvent {
            run_id: self.run_id.to_string(),
            seq: inner.seq,
            ts: unix_millis(),
            kind,
            elapsed_ms,
            payload,
        };
        inner.seq += 1;
        if let Some(sink) = inner.sink.as_mut() {
            // A failing trace sink must not take the run down with it.
            let line = serde_json::to_string(&event).expect("trace events serialize");
            if writeln!(sink, "{line}").and_then(|_| sink.flush()).is_err() {
                tracing::warn!(run_id = %self.run_id, "trace sink write failed");
            }
        }
        inner.events.push(event);
    }

    pub fn warn(&self, reason: &str, detail: impl Into<String>) {
        let detail = detail.into();
        tracing::warn!(run_id = %self.run_id, reason, %detail);
        self.record(
            TraceKind::Warning,
            serde_json::json!({ "reason": reason, "detail": detail }),
        );
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.inner
            .lock()
            .unwrap()
            .events
            .iter()
            .filter(|e| e.kind == kind)
            .count()
    }
}

/// Reads a JSON-lines trace file back into events.
pub fn read_trace(path: impl AsRef<Path>) -> std::io::Result<Vec<TraceEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn events_are_sequenced() {
        let t = Tracer::new("r1");
        t.record(TraceKind::RunStart, json!({}));
        t.clone()
            .record(TraceKind::Save, json!({"store": "narrative"}));
        let ev = t.events();
        assert_eq!(ev.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(t.count(TraceKind::Save), 1);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t/run.jsonl");
        let t = Tracer::to_file("r2", &path).unwrap();
        t.record_timed(TraceKind::ModelCall, json!({"purpose": "query"}), Some(12));
        t.warn("test", "detail");
        let back = read_trace(&path).unwrap();
        assert_eq!(back, t.events());
        assert_eq!(back[1].payload_str("reason"), Some("test"));
        assert_eq!(back[0].without_timing().elapsed_ms, None);
    }
}
