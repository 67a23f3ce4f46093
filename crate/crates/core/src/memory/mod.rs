//! Narrative and episodic memory.
//!
//! Narrative records summarize whole tasks and are keyed by the task's
//! search query. Episodic records hold the step-by-step plan of one
//! successfully finished subtask, keyed by query, subtask and its context.
//! Both live in [`MemoryStore`]s, which persist as JSON lines
//! (`narrative.jsonl`, `episodic.jsonl`) under a memory directory.

mod evaluator;
mod explore;
mod store;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{EmbedError, Embedder, Embedding};
use crate::trace::unix_millis;
use crate::worker::Terminal;

pub use evaluator::SelfEvaluator;
pub use explore::{generate_exploration_tasks, parse_task_list, ExploreError};
pub use store::{
    rank, MemoryRecord, MemoryStore, Scored, StoreHeader, STORE_SCHEMA, STORE_VERSION,
};

pub const NARRATIVE_FILE: &str = "narrative.jsonl";
pub const EPISODIC_FILE: &str = "episodic.jsonl";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory store {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("memory store {path} line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no memory store at {path}")]
    MissingStore { path: String },
    #[error("embedding dimension {actual} does not match store dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("only subtasks that finished with done are stored, got {0}")]
    NotDone(Terminal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskOutcome {
    Success,
    Failure,
}

impl TaskOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskOutcome::Success => "success",
            TaskOutcome::Failure => "failure",
        }
    }
}

impl fmt::Display for TaskOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub id: String,
    /// The task's search query.
    pub key: String,
    pub key_embedding: Embedding,
    pub instruction: String,
    pub summary: String,
    pub outcome: TaskOutcome,
    pub run_id: String,
    pub created_at: u64,
}

impl MemoryRecord for NarrativeRecord {
    const KIND: &'static str = "narrative";

    fn id(&self) -> &str {
        &self.id
    }
    fn key(&self) -> &str {
        &self.key
    }
    fn key_embedding(&self) -> &Embedding {
        &self.key_embedding
    }
    fn created_at(&self) -> u64 {
        self.created_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub task_id: String,
    pub subtask_index: usize,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicRecord {
    pub id: String,
    pub key: String,
    pub key_embedding: Embedding,
    pub subtask: String,
    pub plan: String,
    pub provenance: Provenance,
    pub created_at: u64,
}

impl MemoryRecord for EpisodicRecord {
    const KIND: &'static str = "episodic";

    fn id(&self) -> &str {
        &self.id
    }
    fn key(&self) -> &str {
        &self.key
    }
    fn key_embedding(&self) -> &Embedding {
        &self.key_embedding
    }
    fn created_at(&self) -> u64 {
        self.created_at
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Key text of an episodic record: query, subtask and context on separate
/// lines.
pub fn episodic_key(query: &str, subtask: &str, context: &str) -> String {
    format!(
        "{}\n{}\n{}",
        one_line(query),
        one_line(subtask),
        one_line(context)
    )
}

/// Both stores plus the embedder used to key them.
pub struct Memory {
    narrative: MemoryStore<NarrativeRecord>,
    episodic: MemoryStore<EpisodicRecord>,
    embedder: Arc<dyn Embedder>,
}

impl Memory {
    pub fn in_memory(embedder: Arc<dyn Embedder>) -> Self {
        let dim = embedder.dim();
        Memory {
            narrative: MemoryStore::in_memory(dim),
            episodic: MemoryStore::in_memory(dim),
            embedder,
        }
    }

    /// Opens (creating when needed) both stores under `dir`.
    pub fn open_dir(
        dir: impl AsRef<Path>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, MemoryError> {
        let dir = dir.as_ref();
        let dim = embedder.dim();
        Ok(Memory {
            narrative: MemoryStore::open(dir.join(NARRATIVE_FILE), dim)?,
            episodic: MemoryStore::open(dir.join(EPISODIC_FILE), dim)?,
            embedder,
        })
    }

    pub fn from_stores(
        narrative: MemoryStore<NarrativeRecord>,
        episodic: MemoryStore<EpisodicRecord>,
        embedder: Arc<dyn Embedder>,
    ) -> Self {
        Memory {
            narrative,
            episodic,
            embedder,
        }
    }

    pub fn narrative(&self) -> &MemoryStore<NarrativeRecord> {
        &self.narrative
    }

    pub fn episodic(&self) -> &MemoryStore<EpisodicRecord> {
        &self.episodic
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    fn embed(&self, text: &str) -> Result<Embedding, MemoryError> {
        let e = self.embedder.embed(text)?;
        if e.dim() != self.narrative.dim() {
            return Err(MemoryError::Dimension {
                expected: self.narrative.dim(),
                actual: e.dim(),
            });
        }
        Ok(e)
    }

    pub fn retrieve_narrative(
        &self,
        query: &str,
        k: usize,
    ) -> Result<Vec<Scored<NarrativeRecord>>, MemoryError> {
        let q = self.embed(query)?;
        Ok(self.narrative.retrieve(&q, k, None))
    }

    pub fn retrieve_episodic(
        &self,
        query: &str,
        subtask: &str,
        context: &str,
        k: usize,
    ) -> Result<Vec<Scored<EpisodicRecord>>, MemoryError> {
        let q = self.embed(&episodic_key(query, subtask, context))?;
        Ok(self.episodic.retrieve(&q, k, None))
    }

    pub fn save_narrative(
        &self,
        run_id: &str,
        query: &str,
        instruction: &str,
        summary: &str,
        outcome: TaskOutcome,
    ) -> Result<NarrativeRecord, MemoryError> {
        let record = NarrativeRecord {
            id: self.narrative.next_id(),
            key: one_line(query),
            key_embedding: self.embed(query)?,
            instruction: instruction.to_string(),
            summary: summary.to_string(),
            outcome,
            run_id: run_id.to_string(),
            created_at: unix_millis(),
        };
        self.narrative.insert(record.clone())?;
        Ok(record)
    }

    /// Stores the plan of a finished subtask. Anything that did not end in
    /// `done` is refused.
    pub fn save_episodic(
        &self,
        query: &str,
        subtask: &str,
        context: &str,
        plan: &str,
        provenance: Provenance,
    ) -> Result<EpisodicRecord, MemoryError> {
        if provenance.terminal != Terminal::Done {
            return Err(MemoryError::NotDone(provenance.terminal));
        }
        let key = episodic_key(query, subtask, context);
        let record = EpisodicRecord {
            id: self.episodic.next_id(),
            key_embedding: self.embed(&key)?,
            key,
            subtask: subtask.to_string(),
            plan: plan.to_string(),
            provenance,
            created_at: unix_millis(),
        };
        self.episodic.insert(record.clone())?;
        Ok(record)
    }
}
