//! The manager: query formulation, knowledge retrieval and fusion, and
//! subtask planning.

mod plan;
mod search;

use serde_json::json;
use thiserror::Error;

use crate::aci::Observation;
use crate::fingerprint;
use crate::llm::{ModelClient, ModelError};
use crate::memory::{Memory, NarrativeRecord, Scored};
use crate::prompts;
use crate::trace::{TraceKind, Tracer};

pub use plan::{parse_plan, render_plan, PlanParseError, Subtask};
pub use search::{HttpSearch, SearchClient, SearchError, StubSearch};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("manager reply is not a valid plan: {0}")]
    Parse(#[from] PlanParseError),
}

/// What fusion produced, kept for the trace and for replanning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Guidance {
    pub query: String,
    pub web: String,
    pub experience: Option<Scored<NarrativeRecord>>,
    pub text: String,
}

pub struct Manager {
    client: ModelClient,
}

impl Manager {
    pub fn new(client: ModelClient) -> Self {
        Manager { client }
    }

    fn tracer(&self) -> &Tracer {
        self.client.tracer()
    }

    pub fn formulate_query(
        &self,
        instruction: &str,
        obs: &Observation,
    ) -> Result<String, ModelError> {
        let reply = self.client.complete(
            "manager.query",
            &prompts::manager_query(instruction, &obs.linearized),
        )?;
        let query = reply
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or_default()
            .trim_matches('"')
            .to_string();
        Ok(query)
    }

    /// Web knowledge for `query`. Search failures degrade to no knowledge
    /// and a warning.
    pub fn retrieve_web(&self, search: &dyn SearchClient, query: &str) -> String {
        let result = search.search(query);
        let (text, error) = match result {
            Ok(t) => (t.trim().to_string(), None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        self.tracer().record(
            TraceKind::Retrieval,
            json!({
                "source": "web",
                "backend": search.name(),
                "query_digest": fingerprint::digest(query),
                "found": !text.is_empty(),
                "error": error,
            }),
        );
        if let Some(e) = error {
            self.tracer().warn("web-search-failed", e);
        }
        text
    }

    /// Most similar narrative record for `query`, if any.
    pub fn retrieve_narrative(
        &self,
        memory: &Memory,
        query: &str,
        k: usize,
    ) -> Option<Scored<NarrativeRecord>> {
        match memory.retrieve_narrative(query, k) {
            Ok(hits) => {
                self.tracer().record(
                    TraceKind::Retrieval,
                    json!({
                        "source": "narrative",
                        "query_digest": fingerprint::digest(query),
                        "k": k,
                        "hits": hits.iter().map(|h| json!({
                            "id": h.record.id,
                            "score": h.score,
                            "outcome": h.record.outcome,
                        })).collect::<Vec<_>>(),
                    }),
                );
                hits.into_iter().next()
            }
            Err(e) => {
                self.tracer()
                    .warn("narrative-retrieval-failed", e.to_string());
                None
            }
        }
    }

    /// Combines web knowledge and past experience. With neither there is
    /// nothing to fuse and no model call is made.
    pub fn fuse(
        &self,
        instruction: &str,
        query: &str,
        web: String,
        experience: Option<Scored<NarrativeRecord>>,
    ) -> Result<Guidance, ModelError> {
        let text = if web.is_empty() && experience.is_none() {
            String::new()
        } else {
            let exp = experience
                .as_ref()
                .map(|e| (e.record.outcome.as_str(), e.record.summary.as_str()));
            self.client.complete(
                "manager.fusion",
                &prompts::manager_fusion(instruction, &web, exp),
            )?
        };
        Ok(Guidance {
            query: query.to_string(),
            web,
            experience,
            text,
        })
    }

    pub fn plan(
        &self,
        instruction: &str,
        guidance: &Guidance,
        obs: &Observation,
    ) -> Result<Vec<Subtask>, PlannerError> {
        let messages = prompts::manager_plan(instruction, &guidance.text, &obs.linearized);
        self.ask_plan("manager.plan", messages)
    }

    /// Plans the remaining work after a subtask ended without `done`.
    pub fn replan(
        &self,
        instruction: &str,
        guidance: &Guidance,
        obs: &Observation,
        completed: &[Subtask],
        failure: &str,
    ) -> Result<Vec<Subtask>, PlannerError> {
        let completed: Vec<String> = completed.iter().map(|s| s.title.clone()).collect();
        let messages = prompts::manager_replan(
            instruction,
            &guidance.text,
            &obs.linearized,
            &completed,
            failure,
        );
        self.ask_plan("manager.replan", messages)
    }

    /// One re-ask with a format reminder before giving up.
    fn ask_plan(
        &self,
        purpose: &str,
        messages: Vec<crate::llm::ChatMessage>,
    ) -> Result<Vec<Subtask>, PlannerError> {
        let reply = self.client.complete(purpose, &messages)?;
        match parse_plan(&reply) {
            Ok(plan) => Ok(plan),
            Err(e) => {
                self.tracer().warn("plan-parse-retry", e.to_string());
                let retry = prompts::with_format_reminder(messages, &reply, &e.to_string());
                let reply = self.client.complete(purpose, &retry)?;
                Ok(parse_plan(&reply)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aci::AccessibilityTree;
    use crate::llm::{HashEmbedder, RetryPolicy, ScriptRule, ScriptedBackend};
    use crate::memory::TaskOutcome;
    use std::collections::HashMap;
    use std::sync::Arc;

    fn manager(rules: Vec<ScriptRule>) -> (Manager, Tracer) {
        let tracer = Tracer::new("t");
        let client = ModelClient::new(
            Arc::new(ScriptedBackend::new(rules)),
            RetryPolicy::no_delay(),
            tracer.clone(),
        );
        (Manager::new(client), tracer)
    }

    fn obs() -> Observation {
        Observation::new(
            AccessibilityTree::parse("window \"W\" 0 0 10 10").unwrap(),
            None,
        )
    }

    #[test]
    fn query_is_first_line_unquoted() {
        let (m, _) = manager(vec![ScriptRule::reply(
            prompts::MANAGER_QUERY,
            "\"How to remove an account in Thunderbird\"\nextra",
        )]);
        assert_eq!(
            m.formulate_query("remove it", &obs()).unwrap(),
            "How to remove an account in Thunderbird"
        );
    }

    #[test]
    fn fusion_skipped_without_knowledge() {
        let (m, t) = manager(vec![]);
        let g = m.fuse("task", "q", String::new(), None).unwrap();
        assert!(g.text.is_empty());
        assert_eq!(t.count(TraceKind::ModelCall), 0);
    }

    #[test]
    fn fusion_sees_failure_outcome() {
        let memory = Memory::in_memory(Arc::new(HashEmbedder::default()));
        memory
            .save_narrative(
                "r0",
                "remove account",
                "i",
                "clicked the wrong button",
                TaskOutcome::Failure,
            )
            .unwrap();
        let (m, t) = manager(vec![ScriptRule::reply(
            "A similar past task (failure)",
            "avoid it",
        )]);
        let exp = m.retrieve_narrative(&memory, "remove account", 1);
        assert!(exp.is_some());
        let g = m
            .fuse("task", "remove account", String::new(), exp)
            .unwrap();
        assert_eq!(g.text, "avoid it");
        assert_eq!(t.count(TraceKind::Retrieval), 1);
    }

    #[test]
    fn web_failure_degrades_to_empty() {
        let (m, t) = manager(vec![]);
        let search = StubSearch::from_map(HashMap::new());
        assert_eq!(m.retrieve_web(&search, "missing"), "");
        assert_eq!(t.count(TraceKind::Warning), 1);
        let mut answers = HashMap::new();
        answers.insert("q".to_string(), "use the menu".to_string());
        assert_eq!(
            m.retrieve_web(&StubSearch::from_map(answers), "q"),
            "use the menu"
        );
    }

    #[test]
    fn plan_reasks_once() {
        let (m, t) = manager(vec![
            ScriptRule::reply(prompts::MANAGER_PLAN, "I will open settings."),
            ScriptRule::reply(
                prompts::FORMAT_REMINDER,
                "1. TITLE: Open settings CONTEXT: menu",
            ),
        ]);
        let plan = m.plan("task", &Guidance::default(), &obs()).unwrap();
        assert_eq!(plan, vec![Subtask::new("Open settings", "menu")]);
        assert_eq!(t.count(TraceKind::ModelCall), 2);
    }

    #[test]
    fn plan_fails_after_second_bad_reply() {
        let (m, _) = manager(vec![
            ScriptRule::reply(prompts::MANAGER_PLAN, "nope").repeating()
        ]);
        assert!(matches!(
            m.plan("task", &Guidance::default(), &obs()),
            Err(PlannerError::Parse(_))
        ));
    }

    #[test]
    fn replan_mentions_failure_and_completed() {
        let (m, _) = manager(vec![ScriptRule::reply(
            "Subtasks already completed:\nOpen settings",
            "1. TITLE: Try again CONTEXT: other button",
        )]);
        let plan = m
            .replan(
                "task",
                &Guidance::default(),
                &obs(),
                &[Subtask::new("Open settings", "")],
                "agent.fail()",
            )
            .unwrap();
        assert_eq!(plan[0].title, "Try again");
    }
}
