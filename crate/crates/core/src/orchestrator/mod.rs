//! Runs tasks end to end: perception, planning, execution, evaluation and
//! memory updates.

mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::aci::Observation;
use crate::env_sim::{EnvTask, Environment, SimEnv};
use crate::fingerprint;
use crate::llm::{
    ChatBackend, Embedder, HashEmbedder, HttpEmbedder, ModelClient, ModelConfig, ModelError,
    OpenAiChatBackend,
};
use crate::memory::{
    generate_exploration_tasks, EpisodicRecord, ExploreError, Memory, MemoryError, MemoryRecord,
    MemoryStore, NarrativeRecord, Provenance, SelfEvaluator, TaskOutcome, EPISODIC_FILE,
    NARRATIVE_FILE,
};
use crate::planner::{Guidance, HttpSearch, Manager, SearchClient, StubSearch, Subtask};
use crate::trace::{TraceKind, Tracer};
use crate::worker::{EpisodeContext, StepBudget, Terminal, Worker, WorkerConfig};

pub use config::{ConfigError, EmbeddingBackend, EmbeddingConfig, RunConfig, SearchConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot create model backend: {0}")]
    Backend(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Which retrievals a run may perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Toggles {
    pub web_search: bool,
    pub narrative_memory: bool,
    pub episodic_memory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtaskReport {
    pub title: String,
    pub terminal: Option<Terminal>,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskReport {
    pub run_id: String,
    pub task_id: String,
    pub outcome: TaskOutcome,
    /// `None` when the task has no evaluator.
    pub evaluator_passed: Option<bool>,
    pub subtasks: Vec<SubtaskReport>,
    /// Environment steps taken.
    pub steps: usize,
    pub replans: usize,
    pub duration_ms: u64,
    /// Set when the run stopped on a model or environment error.
    pub error: Option<String>,
    pub trace_path: Option<PathBuf>,
    #[serde(skip)]
    pub trace: Tracer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub id: String,
    pub outcome: TaskOutcome,
    pub steps: usize,
    pub replans: usize,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub rows: Vec<SuiteRow>,
    pub success_rate: f64,
}

impl SuiteReport {
    /// Copy with durations zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> SuiteReport {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.duration_ms = 0;
        }
        r
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplorationReport {
    pub tasks: Vec<String>,
    pub runs: Vec<TaskReport>,
    pub narrative_added: usize,
    pub episodic_added: usize,
}

pub struct AgentBuilder {
    config: RunConfig,
    chat: Option<Arc<dyn ChatBackend>>,
    embedder: Option<Arc<dyn Embedder>>,
    search: Option<Arc<dyn SearchClient>>,
    memory: Option<Arc<Memory>>,
}

impl AgentBuilder {
    pub fn chat_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat = Some(backend);
        self
    }

    pub fn embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn search(mut self, search: Arc<dyn SearchClient>) -> Self {
        self.search = Some(search);
        self
    }

    /// Shares an already opened memory, e.g. between agents in a test.
    pub fn memory(mut self, memory: Arc<Memory>) -> Self {
        self.memory = Some(memory);
        self
    }

    pub fn build(self) -> Result<Agent, AgentError> {
        let config = self.config;
        config.validate()?;
        let chat = match self.chat {
            Some(c) => c,
            None => Arc::new(OpenAiChatBackend::new(config.model.clone())?),
        };
        let memory = match self.memory {
            Some(m) => m,
            None => {
                let embedder = match self.embedder {
                    Some(e) => e,
                    None => build_embedder(&config.embedding, &config.model)?,
                };
                Arc::new(match &config.memory_dir {
                    Some(dir) => Memory::open_dir(dir, embedder)?,
                    None => Memory::in_memory(embedder),
                })
            }
        };
        let search = match self.search {
            Some(s) => Some(s),
            None => build_search(&config.search)?,
        };
        Ok(Agent {
            config,
            chat,
            memory,
            search,
        })
    }
}

pub fn build_embedder(
    cfg: &EmbeddingConfig,
    model: &ModelConfig,
) -> Result<Arc<dyn Embedder>, ModelError> {
    Ok(match cfg.backend {
        EmbeddingBackend::Hash => Arc::new(HashEmbedder::new(cfg.dim)),
        EmbeddingBackend::Http => {
            let model = ModelConfig {
                model_name: cfg.model_name.clone(),
                ..model.clone()
            };
            Arc::new(HttpEmbedder::new(model, cfg.dim)?)
        }
    })
}

fn build_search(cfg: &SearchConfig) -> Result<Option<Arc<dyn SearchClient>>, ModelError> {
    if let Some(dir) = &cfg.stub_dir {
        return Ok(Some(Arc::new(StubSearch::from_dir(dir))));
    }
    match &cfg.url {
        Some(url) => {
            let timeout = Duration::from_secs(cfg.timeout_secs.unwrap_or(30));
            let s =
                HttpSearch::new(url, timeout).map_err(|e| ModelError::Transport(e.to_string()))?;
            Ok(Some(Arc::new(s)))
        }
        None => Ok(None),
    }
}

pub struct Agent {
    config: RunConfig,
    chat: Arc<dyn ChatBackend>,
    memory: Arc<Memory>,
    search: Option<Arc<dyn SearchClient>>,
}

/// Deterministic run identifier: task id plus a digest of id and seed.
pub fn run_id(task_id: &str, seed: u64) -> String {
    let d = fingerprint::digest(&format!("{task_id}\n{seed}"));
    format!("{task_id}-{}", &d[..8])
}

/// Why a run stopped early.
struct Abort(String);

impl<E: std::fmt::Display> From<E> for Abort {
    fn from(e: E) -> Self {
        Abort(e.to_string())
    }
}

struct RunState {
    subtasks: Vec<SubtaskReport>,
    steps: usize,
    replans: usize,
    step_lines: Vec<String>,
    all_done: bool,
    query: String,
}

impl Agent {
    pub fn builder(config: RunConfig) -> AgentBuilder {
        AgentBuilder {
            config,
            chat: None,
            embedder: None,
            search: None,
            memory: None,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn memory(&self) -> &Arc<Memory> {
        &self.memory
    }

    fn toggles(&self) -> Toggles {
        Toggles {
            web_search: self.config.web_search,
            narrative_memory: self.config.narrative_memory,
            episodic_memory: self.config.episodic_memory,
        }
    }

    fn tracer(&self, run_id: &str) -> Tracer {
        let tracer = match &self.config.trace_dir {
            Some(dir) => {
                let path = dir.join(format!("{run_id}.jsonl"));
                Tracer::to_file(run_id, &path).unwrap_or_else(|e| {
                    tracing::warn!("cannot open trace file {}: {e}", path.display());
                    Tracer::new(run_id)
                })
            }
            None => Tracer::new(run_id),
        };
        tracer.with_full_text(self.config.full_trace)
    }

    pub fn run_task(&self, task: &EnvTask) -> TaskReport {
        self.run_with(task, self.toggles())
    }

    /// Runs a task with explicit retrieval toggles.
    pub fn run_with(&self, task: &EnvTask, toggles: Toggles) -> TaskReport {
        let start = Instant::now();
        let run_id = run_id(&task.id, self.config.seed);
        let tracer = self.tracer(&run_id);
        tracer.record(
            TraceKind::RunStart,
            json!({
                "task_id": task.id,
                "instruction": task.instruction,
                "backend": self.chat.name(),
                "embedder": self.memory.embedder().name(),
                "toggles": toggles,
                "max_steps_total": self.config.max_steps_total,
                "max_steps_per_subtask": self.config.max_steps_per_subtask,
                "max_replans": self.config.max_replans,
                "reflection_interval": self.config.reflection_interval,
                "iou_threshold": self.config.iou_threshold,
                "retrieval_k": self.config.retrieval_k,
                "seed": self.config.seed,
            }),
        );
        let client = ModelClient::new(self.chat.clone(), self.config.retry, tracer.clone());
        let mut env = SimEnv::new(self.config.iou_threshold);
        let mut state = RunState {
            subtasks: Vec::new(),
            steps: 0,
            replans: 0,
            step_lines: Vec::new(),
            all_done: false,
            query: String::new(),
        };
        let result = self.execute(task, toggles, &client, &mut env, &mut state);
        let error = result.err().map(|Abort(e)| e);
        let evaluator_passed = task.has_evaluator().then(|| env.evaluate(task));
        let outcome = if error.is_none() && state.all_done && evaluator_passed != Some(false) {
            TaskOutcome::Success
        } else {
            TaskOutcome::Failure
        };
        if let Some(e) = &error {
            tracer.warn("run-aborted", e.clone());
        } else {
            self.save_narrative(task, &client, &state, outcome);
        }
        let duration_ms = start.elapsed().as_millis() as u64;
        tracer.record_timed(
            TraceKind::RunEnd,
            json!({
                "outcome": outcome,
                "evaluator_passed": evaluator_passed,
                "steps": state.steps,
                "replans": state.replans,
                "error": error,
            }),
            Some(duration_ms),
        );
        TaskReport {
            run_id,
            task_id: task.id.clone(),
            outcome,
            evaluator_passed,
            subtasks: state.subtasks,
            steps: state.steps,
            replans: state.replans,
            duration_ms,
            error,
            trace_path: tracer.path(),
            trace: tracer,
        }
    }

    fn execute(
        &self,
        task: &EnvTask,
        toggles: Toggles,
        client: &ModelClient,
        env: &mut SimEnv,
        state: &mut RunState,
    ) -> Result<(), Abort> {
        let tracer = client.tracer();
        let manager = Manager::new(client.clone());
        let evaluator = SelfEvaluator::new(client.clone());
        let worker = Worker::new(
            client.clone(),
            WorkerConfig {
                max_steps: self.config.max_steps_per_subtask,
                reflection_interval: self.config.reflection_interval,
            },
        );
        let k = self.config.retrieval_k;
        let obs = env.reset(task)?;
        let mut guidance = self.gather(&manager, &task.instruction, &obs, toggles)?;
        state.query = guidance.query.clone();
        let mut queue: Vec<Subtask> = manager.plan(&task.instruction, &guidance, &obs)?;
        tracer.record(
            TraceKind::Replan,
            json!({ "initial": true, "subtasks": titles(&queue) }),
        );
        let mut completed: Vec<Subtask> = Vec::new();
        let mut budget = StepBudget::new(self.config.max_steps_total);
        let mut index = 0;
        while !queue.is_empty() {
            let subtask = queue.remove(0);
            let experience = if toggles.episodic_memory {
                self.retrieve_episodic(tracer, &guidance.query, &subtask, k)
            } else {
                None
            };
            let ctx = EpisodeContext {
                instruction: &task.instruction,
                subtask: &subtask,
                index,
                total: index + 1 + queue.len(),
                remaining: &queue,
                experience: experience.as_deref(),
            };
            let result = worker.run_episode(env, &ctx, &mut budget);
            let trajectory = match result {
                Ok(t) => t,
                Err(e) => {
                    state
                        .step_lines
                        .extend(e.partial().iter().map(|s| s.line()));
                    state.subtasks.push(SubtaskReport {
                        title: subtask.title.clone(),
                        terminal: None,
                        steps: e.partial().len(),
                    });
                    state.steps = self.config.max_steps_total - budget.remaining;
                    return Err(Abort(e.to_string()));
                }
            };
            state.steps = self.config.max_steps_total - budget.remaining;
            state.step_lines.extend(trajectory.lines());
            state.subtasks.push(SubtaskReport {
                title: subtask.title.clone(),
                terminal: Some(trajectory.terminal),
                steps: trajectory.steps.len(),
            });
            if trajectory.terminal == Terminal::Done {
                self.save_episodic(
                    tracer,
                    &evaluator,
                    &task.id,
                    &guidance.query,
                    &subtask,
                    index,
                    &trajectory.lines(),
                );
                completed.push(subtask);
                index += 1;
                continue;
            }
            let note = trajectory.failure_note(&subtask);
            if budget.remaining == 0 {
                tracer.warn("step-budget-exhausted", note);
                return Ok(());
            }
            if state.replans >= self.config.max_replans {
                tracer.warn("replan-limit", note);
                return Ok(());
            }
            state.replans += 1;
            let obs = env.observe()?;
            guidance = self.gather(&manager, &task.instruction, &obs, toggles)?;
            queue = manager.replan(&task.instruction, &guidance, &obs, &completed, &note)?;
            tracer.record(
                TraceKind::Replan,
                json!({
                    "initial": false,
                    "replan": state.replans,
                    "after": trajectory.terminal,
                    "failed_subtask": subtask.title,
                    "subtasks": titles(&queue),
                }),
            );
            index += 1;
        }
        state.all_done = true;
        Ok(())
    }

    /// Query formulation, the enabled retrievals and fusion, against `obs`.
    fn gather(
        &self,
        manager: &Manager,
        instruction: &str,
        obs: &Observation,
        toggles: Toggles,
    ) -> Result<Guidance, Abort> {
        let query = manager.formulate_query(instruction, obs)?;
        let web = match (&self.search, toggles.web_search) {
            (Some(s), true) => manager.retrieve_web(s.as_ref(), &query),
            _ => String::new(),
        };
        let experience = if toggles.narrative_memory {
            manager.retrieve_narrative(&self.memory, &query, self.config.retrieval_k)
        } else {
            None
        };
        Ok(manager.fuse(instruction, &query, web, experience)?)
    }

    fn retrieve_episodic(
        &self,
        tracer: &Tracer,
        query: &str,
        subtask: &Subtask,
        k: usize,
    ) -> Option<String> {
        match self
            .memory
            .retrieve_episodic(query, &subtask.title, &subtask.context, k)
        {
            Ok(hits) => {
                tracer.record(
                    TraceKind::Retrieval,
                    json!({
                        "source": "episodic",
                        "subtask": subtask.title,
                        "k": k,
                        "hits": hits.iter().map(|h| json!({
                            "id": h.record.id,
                            "score": h.score,
                        })).collect::<Vec<_>>(),
                    }),
                );
                hits.into_iter().next().map(|h| h.record.plan)
            }
            Err(e) => {
                tracer.warn("episodic-retrieval-failed", e.to_string());
                None
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn save_episodic(
        &self,
        tracer: &Tracer,
        evaluator: &SelfEvaluator,
        task_id: &str,
        query: &str,
        subtask: &Subtask,
        index: usize,
        steps: &[String],
    ) {
        let plan = match evaluator.summarize_episode(&subtask.title, &subtask.context, steps) {
            Ok(p) => p,
            Err(e) => {
                tracer.warn("episode-summary-failed", e.to_string());
                return;
            }
        };
        let provenance = Provenance {
            run_id: tracer.run_id().to_string(),
            task_id: task_id.to_string(),
            subtask_index: index,
            terminal: Terminal::Done,
        };
        match self
            .memory
            .save_episodic(query, &subtask.title, &subtask.context, &plan, provenance)
        {
            Ok(r) => tracer.record(
                TraceKind::Save,
                json!({ "store": "episodic", "id": r.id, "subtask": subtask.title }),
            ),
            Err(e) => tracer.warn("episodic-save-failed", e.to_string()),
        }
    }

    fn save_narrative(
        &self,
        task: &EnvTask,
        client: &ModelClient,
        state: &RunState,
        outcome: TaskOutcome,
    ) {
        let tracer = client.tracer();
        let evaluator = SelfEvaluator::new(client.clone());
        let subtasks: Vec<String> = state.subtasks.iter().map(|s| s.title.clone()).collect();
        let summary = match evaluator.summarize_task(
            &task.instruction,
            &subtasks,
            &state.step_lines,
            outcome,
        ) {
            Ok(s) => s,
            Err(e) => {
                tracer.warn("task-summary-failed", e.to_string());
                return;
            }
        };
        match self.memory.save_narrative(
            tracer.run_id(),
            &state.query,
            &task.instruction,
            &summary,
            outcome,
        ) {
            Ok(r) => tracer.record(
                TraceKind::Save,
                json!({ "store": "narrative", "id": r.id, "outcome": outcome }),
            ),
            Err(e) => tracer.warn("narrative-save-failed", e.to_string()),
        }
    }

    /// Runs tasks in order against the shared memory. Records saved by one
    /// task are visible to the next.
    pub fn run_suite(&self, tasks: &[EnvTask]) -> (SuiteReport, Vec<TaskReport>) {
        let reports: Vec<TaskReport> = tasks.iter().map(|t| self.run_task(t)).collect();
        let rows: Vec<SuiteRow> = reports
            .iter()
            .map(|r| SuiteRow {
                id: r.task_id.clone(),
                outcome: r.outcome,
                steps: r.steps,
                replans: r.replans,
                duration_ms: r.duration_ms,
                error: r.error.clone(),
            })
            .collect();
        let successes = rows
            .iter()
            .filter(|r| r.outcome == TaskOutcome::Success)
            .count();
        let success_rate = if rows.is_empty() {
            0.0
        } else {
            successes as f64 / rows.len() as f64
        };
        (
            SuiteReport {
                schema_version: REPORT_SCHEMA_VERSION,
                rows,
                success_rate,
            },
            reports,
        )
    }

    /// Self-supervised exploration: asks for up to `n` tasks on the base
    /// task's desktop and runs each from a fresh reset with memory retrieval
    /// turned off, so the stores fill with experience before evaluation.
    pub fn run_exploration(
        &self,
        base: &EnvTask,
        n: usize,
    ) -> Result<ExplorationReport, ExploreError> {
        let tracer = self.tracer(&format!("{}-explore", run_id(&base.id, self.config.seed)));
        let client = ModelClient::new(self.chat.clone(), self.config.retry, tracer.clone());
        let mut env = SimEnv::new(self.config.iou_threshold);
        let obs = env.reset(base)?;
        let tasks = generate_exploration_tasks(&client, &base.app_codes(), &obs.linearized, n)?;
        let (n0, e0) = (self.memory.narrative().len(), self.memory.episodic().len());
        let toggles = Toggles {
            web_search: self.config.web_search,
            narrative_memory: false,
            episodic_memory: false,
        };
        let runs = tasks
            .iter()
            .enumerate()
            .map(|(i, instruction)| {
                let task =
                    base.with_instruction(format!("{}-explore-{}", base.id, i + 1), instruction);
                self.run_with(&task, toggles)
            })
            .collect();
        Ok(ExplorationReport {
            tasks,
            runs,
            narrative_added: self.memory.narrative().len() - n0,
            episodic_added: self.memory.episodic().len() - e0,
        })
    }
}

fn titles(subtasks: &[Subtask]) -> Vec<&str> {
    subtasks.iter().map(|s| s.title.as_str()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Narrative,
    Episodic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectRow {
    pub id: String,
    pub key: String,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TaskOutcome>,
    pub created_at: u64,
}

impl From<&NarrativeRecord> for InspectRow {
    fn from(r: &NarrativeRecord) -> Self {
        InspectRow {
            id: r.id.clone(),
            key: r.key.clone(),
            summary: r.summary.clone(),
            score: None,
            outcome: Some(r.outcome),
            created_at: r.created_at,
        }
    }
}

impl From<&EpisodicRecord> for InspectRow {
    fn from(r: &EpisodicRecord) -> Self {
        InspectRow {
            id: r.id.clone(),
            key: r.key.clone(),
            summary: r.plan.clone(),
            score: None,
            outcome: None,
            created_at: r.created_at,
        }
    }
}

fn inspect_store<R>(
    path: &Path,
    query: Option<&str>,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<InspectRow>, MemoryError>
where
    R: MemoryRecord,
    for<'a> InspectRow: From<&'a R>,
{
    let store: MemoryStore<R> = MemoryStore::open_existing(path)?;
    match query {
        None => Ok(store.records().iter().map(InspectRow::from).collect()),
        Some(q) => {
            let e = embedder.embed(q)?;
            if e.dim() != store.dim() {
                return Err(MemoryError::Dimension {
                    expected: store.dim(),
                    actual: e.dim(),
                });
            }
            Ok(store
                .retrieve(&e, k, None)
                .iter()
                .map(|s| InspectRow {
                    score: Some(s.score),
                    ..InspectRow::from(&s.record)
                })
                .collect())
        }
    }
}

/// Lists a store's records, or the `k` best matches for `query`. For the
/// episodic store the query is used as the whole key text.
pub fn inspect_memory(
    dir: impl AsRef<Path>,
    kind: StoreKind,
    query: Option<&str>,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<InspectRow>, MemoryError> {
    let dir = dir.as_ref();
    match kind {
        StoreKind::Narrative => {
            inspect_store::<NarrativeRecord>(&dir.join(NARRATIVE_FILE), query, k, embedder)
        }
        StoreKind::Episodic => {
            inspect_store::<EpisodicRecord>(&dir.join(EPISODIC_FILE), query, k, embedder)
        }
    }
}
