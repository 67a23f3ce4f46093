//! `deskpilot`: run tasks, suites and exploration against the simulated
//! desktop, and inspect memory.
//!
//! Exit codes: 0 success, 1 task failure, 2 configuration or load error,
//! 3 backend or runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use deskpilot::env_sim::{EnvTask, Environment, SimEnv};
use deskpilot::llm::ScriptedBackend;
use deskpilot::memory::TaskOutcome;
use deskpilot::orchestrator::{
    build_embedder, inspect_memory, Agent, RunConfig, StoreKind, SuiteReport, TaskReport,
};

const TASK_FAILED: u8 = 1;
const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "deskpilot",
    version,
    about = "Hierarchical GUI agent on a simulated desktop"
)]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scripted backend (JSON lines) instead of the HTTP model.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// OpenAI-compatible base URL, e.g. http://localhost:8000/v1.
    #[arg(long, global = true, env = "AGENT_MODEL_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, global = true, env = "AGENT_MODEL_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    memory_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    trace_dir: Option<PathBuf>,
    /// Record full prompts and replies in the trace.
    #[arg(long, global = true)]
    full_trace: bool,
    /// Directory of canned search answers named `<digest>.txt`.
    #[arg(long, global = true)]
    search_stub: Option<PathBuf>,
    #[arg(long, global = true)]
    search_url: Option<String>,
    #[arg(long, global = true)]
    no_web: bool,
    #[arg(long, global = true)]
    no_narrative: bool,
    #[arg(long, global = true)]
    no_episodic: bool,
    #[arg(long, global = true)]
    max_steps_total: Option<usize>,
    #[arg(long, global = true)]
    max_steps_per_subtask: Option<usize>,
    #[arg(long, global = true)]
    max_replans: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task file.
    Run {
        task: PathBuf,
        /// Write the task report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every task in a directory, in file-name order.
    Suite {
        dir: PathBuf,
        /// Write the suite report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate tasks on a task's desktop and run them to fill memory.
    Explore {
        task: PathBuf,
        /// Number of tasks to ask for; defaults to the configured value.
        #[arg(short, long)]
        n: Option<usize>,
    },
    /// Memory store utilities.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
    /// Check that task files load and their desktops build.
    ValidateTask {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// List records, or the best matches for a query.
    Inspect {
        /// Memory directory; defaults to the configured one.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Store::Narrative)]
        store: Store,
        #[arg(long)]
        query: Option<String>,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Store {
    Narrative,
    Episodic,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

type CliResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let opts = &cli.opts;
    match cli.command {
        Command::Run { task, report } => {
            let task = load_task(&task)?;
            let agent = build_agent(opts)?;
            let r = agent.run_task(&task);
            print_task(&r);
            if let Some(path) = report {
                write_json(&path, &r)?;
            }
            Ok(task_exit(&r))
        }
        Command::Suite { dir, report } => {
            let tasks = EnvTask::load_dir(&dir)
                .with_context(|| format!("loading tasks from {}", dir.display()))
                .map_err(fail(CONFIG_ERROR))?;
            if tasks.is_empty() {
                return Err(fail(CONFIG_ERROR)(anyhow!(
                    "no task files in {}",
                    dir.display()
                )));
            }
            let agent = build_agent(opts)?;
            let (suite, reports) = agent.run_suite(&tasks);
            print_suite(&suite);
            if let Some(path) = report {
                write_json(&path, &suite)?;
            }
            if reports.iter().any(|r| r.error.is_some()) {
                Ok(ExitCode::from(RUNTIME_ERROR))
            } else if suite.rows.iter().any(|r| r.outcome == TaskOutcome::Failure) {
                Ok(ExitCode::from(TASK_FAILED))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Explore { task, n } => {
            let task = load_task(&task)?;
            let agent = build_agent(opts)?;
            let n = n.unwrap_or(agent.config().exploration_tasks);
            let report = agent
                .run_exploration(&task, n)
                .context("exploration failed")
                .map_err(fail(RUNTIME_ERROR))?;
            for r in &report.runs {
                print_task(r);
            }
            println!(
                "exploration: {} tasks, {} narrative and {} episodic records added",
                report.tasks.len(),
                report.narrative_added,
                report.episodic_added
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Memory {
            command:
                MemoryCommand::Inspect {
                    dir,
                    store,
                    query,
                    k,
                },
        } => {
            let config = load_config(opts)?;
            let dir = dir
                .or(config.memory_dir.clone())
                .ok_or_else(|| anyhow!("no memory directory; pass --dir or --memory-dir"))
                .map_err(fail(CONFIG_ERROR))?;
            let embedder = build_embedder(&config.embedding, &config.model)
                .map_err(|e| fail(CONFIG_ERROR)(e.into()))?;
            let kind = match store {
                Store::Narrative => StoreKind::Narrative,
                Store::Episodic => StoreKind::Episodic,
            };
            let rows = inspect_memory(&dir, kind, query.as_deref(), k, embedder.as_ref())
                .map_err(|e| fail(CONFIG_ERROR)(e.into()))?;
            println!("{} results", rows.len());
            for r in rows {
                let score = r.score.map(|s| format!("{s:.4}  ")).unwrap_or_default();
                let outcome = r.outcome.map(|o| format!("[{o}] ")).unwrap_or_default();
                println!(
                    "{}  {score}{outcome}{}\n    {}",
                    r.id,
                    r.key.replace('\n', " | "),
                    r.summary.replace('\n', " ")
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateTask { paths } => {
            let mut bad = 0;
            for path in &paths {
                let checked = EnvTask::from_file(path)
                    .map_err(anyhow::Error::from)
                    .and_then(|t| {
                        SimEnv::default()
                            .reset(&t)
                            .map(|obs| (t, obs.tree.len()))
                            .map_err(anyhow::Error::from)
                    });
                match checked {
                    Ok((t, n)) => println!(
                        "ok {}: {} ({n} elements, {})",
                        path.display(),
                        t.id,
                        if t.has_evaluator() {
                            "with evaluator"
                        } else {
                            "no evaluator"
                        }
                    ),
                    Err(e) => {
                        bad += 1;
                        println!("invalid {}: {e:#}", path.display());
                    }
                }
            }
            Ok(if bad == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CONFIG_ERROR)
            })
        }
    }
}

fn load_task(path: &Path) -> Result<EnvTask, Failure> {
    EnvTask::from_file(path)
        .with_context(|| format!("loading task {}", path.display()))
        .map_err(fail(CONFIG_ERROR))
}

fn load_config(opts: &GlobalOpts) -> Result<RunConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| fail(CONFIG_ERROR)(e.into()))?,
        None => RunConfig::default(),
    };
    if let Some(v) = &opts.endpoint {
        cfg.model.endpoint = v.clone();
    }
    if let Some(v) = &opts.api_key {
        cfg.model.api_key = Some(v.clone());
    }
    if let Some(v) = &opts.model {
        cfg.model.model_name = v.clone();
    }
    if let Some(v) = &opts.memory_dir {
        cfg.memory_dir = Some(v.clone());
    }
    if let Some(v) = &opts.trace_dir {
        cfg.trace_dir = Some(v.clone());
    }
    if let Some(v) = &opts.search_stub {
        cfg.search.stub_dir = Some(v.clone());
    }
    if let Some(v) = &opts.search_url {
        cfg.search.url = Some(v.clone());
    }
    cfg.full_trace |= opts.full_trace;
    if opts.no_web {
        cfg.web_search = false;
    }
    if opts.no_narrative {
        cfg.narrative_memory = false;
    }
    if opts.no_episodic {
        cfg.episodic_memory = false;
    }
    if let Some(v) = opts.max_steps_total {
        cfg.max_steps_total = v;
    }
    if let Some(v) = opts.max_steps_per_subtask {
        cfg.max_steps_per_subtask = v;
    }
    if let Some(v) = opts.max_replans {
        cfg.max_replans = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(|e| fail(CONFIG_ERROR)(e.into()))?;
    Ok(cfg)
}

fn build_agent(opts: &GlobalOpts) -> Result<Agent, Failure> {
    let config = load_config(opts)?;
    let mut builder = Agent::builder(config);
    if let Some(path) = &opts.script {
        let script = ScriptedBackend::from_file(path).map_err(|e| fail(CONFIG_ERROR)(e.into()))?;
        builder = builder.chat_backend(Arc::new(script));
    }
    builder.build().map_err(|e| fail(CONFIG_ERROR)(e.into()))
}

fn task_exit(r: &TaskReport) -> ExitCode {
    match (&r.error, r.outcome) {
        (Some(_), _) => ExitCode::from(RUNTIME_ERROR),
        (None, TaskOutcome::Success) => ExitCode::SUCCESS,
        (None, TaskOutcome::Failure) => ExitCode::from(TASK_FAILED),
    }
}

fn print_task(r: &TaskReport) {
    let evaluator = match r.evaluator_passed {
        Some(true) => "passed",
        Some(false) => "failed",
        None => "none",
    };
    println!(
        "{}: {} ({} steps, {} replans, evaluator {evaluator}, {} ms)",
        r.task_id, r.outcome, r.steps, r.replans, r.duration_ms
    );
    for (i, s) in r.subtasks.iter().enumerate() {
        let terminal = s.terminal.map_or("error".to_string(), |t| t.to_string());
        println!("  {}. {} -> {terminal} ({} steps)", i + 1, s.title, s.steps);
    }
    if let Some(e) = &r.error {
        println!("  error: {e}");
    }
    if let Some(p) = &r.trace_path {
        println!("  trace: {}", p.display());
    }
}

fn print_suite(s: &SuiteReport) {
    for row in &s.rows {
        let err = row
            .error
            .as_deref()
            .map(|e| format!("  ({e})"))
            .unwrap_or_default();
        println!(
            "{:<32} {:<8} steps={:<3} replans={} {} ms{err}",
            row.id, row.outcome, row.steps, row.replans, row.duration_ms
        );
    }
    let ok = s
        .rows
        .iter()
        .filter(|r| r.outcome == TaskOutcome::Success)
        .count();
    println!(
        "success rate: {:.1}% ({ok}/{})",
        s.success_rate * 100.0,
        s.rows.len()
    );
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(RUNTIME_ERROR)(e.into()))?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(fail(RUNTIME_ERROR))
}
