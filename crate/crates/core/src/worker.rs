//! The worker: carries out one subtask as a sequence of grounded actions.
//!
//! Each turn the model answers in four sections:
//!
//! ```text
//! STATUS CHECK: The settings dialog is not open yet.
//! OBSERVATION ANALYSIS: The menu bar shows "Account Settings" as element 41.
//! SEMANTIC ACTION: Open Account Settings.
//! GROUNDED ACTION: agent.click(41, 1, "left")
//! ```
//!
//! Actions that fail validation are not sent to the environment; the
//! violations are shown to the model on the next turn instead. Both kinds of
//! turn count against the subtask's step limit.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::aci::{compile_action, join_violations, parse_action_literal, Action, CompileError};
use crate::env_sim::{EnvError, Environment};
use crate::fingerprint;
use crate::llm::{ChatMessage, ModelClient, ModelError};
use crate::planner::Subtask;
use crate::prompts::{self, WorkerPrompt};
use crate::trace::{TraceKind, Tracer};

pub const HISTORY_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Done,
    Fail,
    StepLimit,
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Terminal::Done => "done",
            Terminal::Fail => "fail",
            Terminal::StepLimit => "step-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub status_check: String,
    pub analysis: String,
    pub semantic_action: String,
    pub grounded_action: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("worker reply is malformed: {0}")]
pub struct ResponseParseError(pub String);

const SECTIONS: [&str; 4] = [
    "STATUS CHECK:",
    "OBSERVATION ANALYSIS:",
    "SEMANTIC ACTION:",
    "GROUNDED ACTION:",
];

/// Position of `header` at the start of a line (after optional markdown
/// decoration), searching from `from`. Returns (header start, body start).
fn find_header(text: &str, header: &str, from: usize) -> Option<(usize, usize)> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if start < from {
            continue;
        }
        let lead = line.len() - line.trim_start_matches(['#', '*', ' ', '\t']).len();
        let rest = &line[lead..];
        if rest.len() >= header.len() && rest[..header.len()].eq_ignore_ascii_case(header) {
            let mut body = start + lead + header.len();
            // Closing markdown emphasis such as `**STATUS CHECK:**`.
            while text[body..].starts_with('*') {
                body += 1;
            }
            return Some((start, body));
        }
    }
    None
}

pub fn parse_response(text: &str) -> Result<WorkerResponse, ResponseParseError> {
    let mut spans = Vec::new();
    let mut from = 0;
    for h in SECTIONS {
        let (start, body) = find_header(text, h, from)
            .ok_or_else(|| ResponseParseError(format!("missing section `{h}`")))?;
        spans.push((start, body));
        from = body;
    }
    let body = |i: usize| {
        let end = spans.get(i + 1).map_or(text.len(), |s| s.0);
        text[spans[i].1..end].trim().to_string()
    };
    let grounded = body(3);
    if grounded.is_empty() {
        return Err(ResponseParseError("GROUNDED ACTION is empty".into()));
    }
    Ok(WorkerResponse {
        status_check: body(0),
        analysis: body(1),
        semantic_action: body(2),
        grounded_action: grounded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub status_check: String,
    pub semantic_action: String,
    pub action: Action,
    /// Validation violations when the action was not executed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
    pub observation_digest: String,
}

impl StepRecord {
    pub fn line(&self) -> String {
        let mut s = format!(
            "{}. {} -> {}",
            self.index + 1,
            self.semantic_action,
            self.action.to_literal()
        );
        if let Some(r) = &self.rejected {
            s.push_str(&format!(" [rejected: {r}]"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub subtask_index: usize,
    pub steps: Vec<StepRecord>,
    pub terminal: Terminal,
    /// Steps that reached the environment.
    pub env_steps: usize,
}

impl Trajectory {
    pub fn lines(&self) -> Vec<String> {
        self.steps.iter().map(StepRecord::line).collect()
    }

    /// What the manager is told when replanning after this episode.
    pub fn failure_note(&self, subtask: &Subtask) -> String {
        let mut note = format!("Subtask \"{}\" ended with {}", subtask.title, self.terminal);
        match self.terminal {
            Terminal::StepLimit => {
                note.push_str(&format!(" after {} steps.", self.steps.len()));
            }
            _ => {
                let why = self
                    .steps
                    .last()
                    .map(|s| s.status_check.as_str())
                    .filter(|s| !s.is_empty())
                    .unwrap_or("no reason given");
                note.push_str(&format!(". Reason: {why}"));
            }
        }
        let lines = self.lines();
        let tail = &lines[lines.len().saturating_sub(HISTORY_WINDOW)..];
        if !tail.is_empty() {
            note.push_str("\nLast actions:\n");
            note.push_str(&tail.join("\n"));
        }
        note
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("model call failed during subtask: {source}")]
    Model {
        source: ModelError,
        partial: Vec<StepRecord>,
    },
    #[error("{source}")]
    Response {
        source: ResponseParseError,
        partial: Vec<StepRecord>,
    },
    #[error("environment error during subtask: {source}")]
    Env {
        source: EnvError,
        partial: Vec<StepRecord>,
    },
}

impl EpisodeError {
    pub fn partial(&self) -> &[StepRecord] {
        match self {
            EpisodeError::Model { partial, .. }
            | EpisodeError::Response { partial, .. }
            | EpisodeError::Env { partial, .. } => partial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerConfig {
    pub max_steps: usize,
    /// Reflect before every `reflection_interval`-th step; 0 disables.
    pub reflection_interval: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            max_steps: 15,
            reflection_interval: 3,
        }
    }
}

/// Environment steps left for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepBudget {
    pub remaining: usize,
}

impl StepBudget {
    pub fn new(total: usize) -> Self {
        StepBudget { remaining: total }
    }
}

pub struct EpisodeContext<'a> {
    pub instruction: &'a str,
    pub subtask: &'a Subtask,
    pub index: usize,
    pub total: usize,
    pub remaining: &'a [Subtask],
    pub experience: Option<&'a str>,
}

pub struct Worker {
    client: ModelClient,
    config: WorkerConfig,
}

impl Worker {
    pub fn new(client: ModelClient, config: WorkerConfig) -> Self {
        Worker { client, config }
    }

    fn tracer(&self) -> &Tracer {
        self.client.tracer()
    }

    fn reflect(&self, subtask: &Subtask, history: &[String], screen: &str) -> Option<String> {
        match self.client.complete(
            "worker.reflect",
            &prompts::worker_reflect(&subtask.title, history, screen),
        ) {
            Ok(r) => Some(r),
            Err(e) => {
                self.tracer().warn("reflection-failed", e.to_string());
                None
            }
        }
    }

    fn propose(
        &self,
        messages: Vec<ChatMessage>,
    ) -> Result<(WorkerResponse, Action), EpisodeError> {
        let partial = Vec::new;
        let reply = self
            .client
            .complete("worker.action", &messages)
            .map_err(|source| EpisodeError::Model {
                source,
                partial: partial(),
            })?;
        let parse = |reply: &str| -> Result<(WorkerResponse, Action), ResponseParseError> {
            let r = parse_response(reply)?;
            let a = parse_action_literal(&r.grounded_action)
                .map_err(|e| ResponseParseError(format!("GROUNDED ACTION: {e}")))?;
            Ok((r, a))
        };
        match parse(&reply) {
            Ok(ok) => Ok(ok),
            Err(e) => {
                self.tracer().warn("worker-parse-retry", e.to_string());
                let retry = prompts::with_format_reminder(messages, &reply, &e.0);
                let reply = self
                    .client
                    .complete("worker.action", &retry)
                    .map_err(|source| EpisodeError::Model {
                        source,
                        partial: partial(),
                    })?;
                parse(&reply).map_err(|source| EpisodeError::Response {
                    source,
                    partial: partial(),
                })
            }
        }
    }

    /// Runs one subtask until the model says done or fail, or a step limit
    /// is reached.
    pub fn run_episode(
        &self,
        env: &mut dyn Environment,
        ctx: &EpisodeContext<'_>,
        budget: &mut StepBudget,
    ) -> Result<Trajectory, EpisodeError> {
        self.tracer().record(
            TraceKind::SubtaskStart,
            json!({
                "index": ctx.index,
                "title": ctx.subtask.title,
                "context": ctx.subtask.context,
                "experience": ctx.experience.is_some(),
            }),
        );
        let mut steps: Vec<StepRecord> = Vec::new();
        let mut env_steps = 0;
        let mut reflection: Option<String> = None;
        let mut feedback: Option<String> = None;
        let remaining: Vec<String> = ctx.remaining.iter().map(|s| s.title.clone()).collect();
        let with_partial = |steps: &Vec<StepRecord>, e: EpisodeError| -> EpisodeError {
            match e {
                EpisodeError::Model { source, .. } => EpisodeError::Model {
                    source,
                    partial: steps.clone(),
                },
                EpisodeError::Response { source, .. } => EpisodeError::Response {
                    source,
                    partial: steps.clone(),
                },
                EpisodeError::Env { source, .. } => EpisodeError::Env {
                    source,
                    partial: steps.clone(),
                },
            }
        };
        let terminal = loop {
            if steps.len() >= self.config.max_steps || budget.remaining == 0 {
                break Terminal::StepLimit;
            }
            let t = steps.len();
            let obs = env.observe().map_err(|source| EpisodeError::Env {
                source,
                partial: steps.clone(),
            })?;
            let lines: Vec<String> = steps.iter().map(StepRecord::line).collect();
            if self.config.reflection_interval > 0
                && t > 0
                && t.is_multiple_of(self.config.reflection_interval)
            {
                reflection = self.reflect(ctx.subtask, &lines, &obs.linearized);
            }
            let earlier = lines.len().saturating_sub(HISTORY_WINDOW);
            let buffer = env.buffer();
            let messages = prompts::worker_action(&WorkerPrompt {
                instruction: ctx.instruction,
                subtask: &ctx.subtask.title,
                context: &ctx.subtask.context,
                position: (ctx.index + 1, ctx.total),
                remaining: &remaining,
                experience: ctx.experience,
                reflection: reflection.as_deref(),
                history: &lines[earlier..],
                earlier,
                feedback: feedback.as_deref(),
                buffer: buffer.as_deref(),
                screen: &obs.linearized,
            });
            let (response, action) = self
                .propose(messages)
                .map_err(|e| with_partial(&steps, e))?;
            let compiled = compile_action(&action, &obs);
            let rejected = match &compiled {
                Err(CompileError::Invalid(v)) => Some(join_violations(v)),
                Ok(_) => None,
            };
            self.tracer().record(
                TraceKind::Action,
                json!({
                    "subtask": ctx.index,
                    "step": t,
                    "action": action.to_literal(),
                    "kind": action.kind().name(),
                    "valid": rejected.is_none(),
                    "violations": rejected,
                    "observation_digest": obs.digest(),
                }),
            );
            steps.push(StepRecord {
                index: t,
                status_check: response.status_check,
                semantic_action: response.semantic_action,
                action: action.clone(),
                rejected: rejected.clone(),
                observation_digest: obs.digest(),
            });
            let Ok(script) = compiled else {
                feedback = rejected;
                continue;
            };
            feedback = None;
            let result = env.step(&script).map_err(|source| EpisodeError::Env {
                source,
                partial: steps.clone(),
            })?;
            budget.remaining -= 1;
            env_steps += 1;
            self.tracer().record(
                TraceKind::EnvStep,
                json!({
                    "subtask": ctx.index,
                    "step": t,
                    "events": script.events.len(),
                    "script_digest": fingerprint::digest(&script.to_text()),
                    "applied": result.applied,
                    "clock_ms": result.clock_ms,
                }),
            );
            match action {
                Action::Done => break Terminal::Done,
                Action::Fail => break Terminal::Fail,
                _ => {}
            }
        };
        self.tracer().record(
            TraceKind::SubtaskEnd,
            json!({
                "index": ctx.index,
                "terminal": terminal,
                "steps": steps.len(),
                "env_steps": env_steps,
            }),
        );
        Ok(Trajectory {
            subtask_index: ctx.index,
            steps,
            terminal,
            env_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_four_sections() {
        let r = parse_response(
            "STATUS CHECK: not yet\nOBSERVATION ANALYSIS: menu visible\n\
             SEMANTIC ACTION: open it\nGROUNDED ACTION: agent.click(41, 1, \"left\")",
        )
        .unwrap();
        assert_eq!(r.status_check, "not yet");
        assert_eq!(r.grounded_action, "agent.click(41, 1, \"left\")");
    }

    #[test]
    fn tolerates_markdown_headers() {
        let r = parse_response(
            "**STATUS CHECK:** a\n## Observation Analysis: b\n\
             SEMANTIC ACTION:\n  c\n**GROUNDED ACTION:**\n```\nagent.done()\n```",
        )
        .unwrap();
        assert_eq!(r.analysis, "b");
        assert_eq!(r.semantic_action, "c");
        assert!(r.grounded_action.contains("agent.done()"));
    }

    #[test]
    fn rejects_missing_or_out_of_order_sections() {
        assert!(parse_response("GROUNDED ACTION: agent.done()").is_err());
        assert!(parse_response(
            "GROUNDED ACTION: agent.done()\nSTATUS CHECK: a\nOBSERVATION ANALYSIS: b\nSEMANTIC ACTION: c"
        )
        .is_err());
        assert!(parse_response(
            "STATUS CHECK: a\nOBSERVATION ANALYSIS: b\nSEMANTIC ACTION: c\nGROUNDED ACTION:   "
        )
        .is_err());
    }

    #[test]
    fn failure_note_keeps_last_five_steps() {
        let step = |i: usize| StepRecord {
            index: i,
            status_check: format!("check {i}"),
            semantic_action: format!("act {i}"),
            action: Action::click(i as u32),
            rejected: None,
            observation_digest: String::new(),
        };
        let t = Trajectory {
            subtask_index: 0,
            steps: (0..7).map(step).collect(),
            terminal: Terminal::Fail,
            env_steps: 7,
        };
        let note = t.failure_note(&Subtask::new("Open", ""));
        assert!(note.contains("ended with fail. Reason: check 6"));
        assert!(note.contains("3. act 2"));
        assert!(!note.contains("2. act 1"));
    }
}
