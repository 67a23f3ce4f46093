//! # deskpilot
//!
//! A hierarchical GUI agent. The [`planner`] manager turns an instruction
//! and the first observation into a how-to query, fuses web knowledge with a
//! similar past task from narrative memory and plans a queue of subtasks.
//! The [`worker`] executes one subtask at a time through the bounded action
//! set in [`aci`], consulting episodic memory for a similar finished subtask.
//! After each finished subtask and at the end of the task, a self-evaluator
//! writes summaries back to [`memory`].
//!
//! Everything runs offline against [`env_sim::SimEnv`], a deterministic
//! simulated desktop, with [`llm::ScriptedBackend`] standing in for a chat
//! model. The same interfaces accept OpenAI-compatible HTTP endpoints.
//!
//! ```no_run
//! use std::sync::Arc;
//! use deskpilot::env_sim::EnvTask;
//! use deskpilot::llm::ScriptedBackend;
//! use deskpilot::orchestrator::{Agent, RunConfig};
//!
//! let cfg = RunConfig::default();
//! let backend = Arc::new(ScriptedBackend::from_file("script.jsonl").unwrap());
//! let agent = Agent::builder(cfg).chat_backend(backend).build().unwrap();
//! let task = EnvTask::from_file("task.toml").unwrap();
//! let outcome = agent.run_task(&task);
//! println!("{:?}", outcome.outcome);
//! ```

pub mod aci;
pub mod env_sim;
pub mod fingerprint;
pub mod llm;
pub mod memory;
pub mod orchestrator;
pub mod planner;
pub mod prompts;
pub mod trace;
pub mod worker;

pub use aci::{Action, BoundingBox, EventScript, Observation};
pub use orchestrator::{Agent, RunConfig};
