#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use deskpilot::env_sim::EnvTask;
use deskpilot::llm::{HashEmbedder, RetryPolicy, ScriptedBackend};
use deskpilot::memory::Memory;
use deskpilot::orchestrator::{Agent, RunConfig};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn task(name: &str) -> EnvTask {
    EnvTask::from_file(fixture(&format!("tasks/{name}.toml"))).unwrap()
}

pub fn suite_tasks() -> Vec<EnvTask> {
    [
        "thunderbird_remove_account",
        "notes_save",
        "files_archive",
        "settings_dark_mode",
    ]
    .into_iter()
    .map(task)
    .collect()
}

pub fn script(name: &str) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::from_file(fixture(&format!("scripts/{name}.jsonl"))).unwrap())
}

pub fn config() -> RunConfig {
    RunConfig {
        retry: RetryPolicy::no_delay(),
        ..RunConfig::default()
    }
}

/// Every query gets the same canned web answer.
pub struct AnySearch;

impl deskpilot::planner::SearchClient for AnySearch {
    fn name(&self) -> &str {
        "any"
    }

    fn search(&self, _query: &str) -> Result<String, deskpilot::planner::SearchError> {
        Ok("Open the settings of the application and look for the relevant option.".into())
    }
}

pub fn agent_with(config: RunConfig, script_name: &str, memory: Arc<Memory>) -> Agent {
    Agent::builder(config)
        .chat_backend(script(script_name))
        .search(Arc::new(AnySearch))
        .memory(memory)
        .build()
        .unwrap()
}

pub fn agent(script_name: &str) -> Agent {
    agent_with(config(), script_name, fresh_memory())
}

pub fn fresh_memory() -> Arc<Memory> {
    Arc::new(Memory::in_memory(Arc::new(HashEmbedder::default())))
}
