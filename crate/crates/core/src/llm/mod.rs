//! Chat-completion and embedding backends.
//!
//! [`ModelClient`] is what the planner, worker and self-evaluator talk to. It
//! wraps any [`ChatBackend`] with the retry policy and writes one model-call
//! trace event per logical call.

mod embed;
mod openai;
mod scripted;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::fingerprint;
use crate::trace::{TraceKind, Tracer};

pub use embed::{cosine, EmbedError, Embedder, Embedding, HashEmbedder, HttpEmbedder};
pub(crate) use openai::post_json;
pub use openai::{ModelConfig, OpenAiChatBackend};
pub use scripted::{ScriptError, ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    /// Data URIs, URLs or local file paths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, text)
    }

    fn new(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn with_image(mut self, image: impl Into<String>) -> Self {
        self.images.push(image.into());
        self
    }
}

/// The text that scripted rules match against and that fingerprints cover:
/// each message as `role: text` on its own line.
pub fn prompt_text(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("{}: {}\n", m.role.as_str(), m.text))
        .collect()
}

pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    fingerprint::digest(&prompt_text(messages))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            ..Completion::default()
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend returned an empty reply")]
    EmptyReply,
    #[error("could not decode backend response: {0}")]
    Decode(String),
    #[error("no script rule matches prompt {digest} ({preview})")]
    ScriptExhausted { digest: String, preview: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ModelError {
    /// Transport failures, rate limiting and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ModelError::Transport(_) => true,
            ModelError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Short identifier recorded in traces.
    fn name(&self) -> &str;

    /// One attempt, no retries.
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, ModelError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles for each further retry.
    #[serde(with = "millis")]
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            ..RetryPolicy::default()
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// A backend bound to one run's trace.
#[derive(Clone)]
pub struct ModelClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    tracer: Tracer,
}

impl ModelClient {
    pub fn new(backend: Arc<dyn ChatBackend>, retry: RetryPolicy, tracer: Tracer) -> Self {
        ModelClient {
            backend,
            retry,
            tracer,
        }
    }

    pub fn tracer(&self) -> &Tracer {
        &self.tracer
    }

    /// Sends `messages` and returns the reply text. `purpose` labels the call
    /// in the trace (e.g. `manager.query`).
    pub fn complete(&self, purpose: &str, messages: &[ChatMessage]) -> Result<String, ModelError> {
        if messages.is_empty() {
            return Err(ModelError::InvalidRequest("no messages".into()));
        }
        if let Some(bad) = messages
            .iter()
            .find(|m| m.text.trim().is_empty() && m.images.is_empty())
        {
            return Err(ModelError::InvalidRequest(format!(
                "empty {} message",
                bad.role.as_str()
            )));
        }
        let prompt = prompt_text(messages);
        let digest = fingerprint::digest(&prompt);
        let start = Instant::now();
        let mut retry = 0;
        let result = loop {
            match self.backend.complete(messages) {
                Ok(c) if c.text.trim().is_empty() => break Err(ModelError::EmptyReply),
                Ok(c) => break Ok(c),
                Err(e) if e.is_retryable() && retry < self.retry.max_retries => {
                    self.tracer.record(
                        TraceKind::Warning,
                        json!({
                            "reason": "model-retry",
                            "purpose": purpose,
                            "attempt": retry + 1,
                            "error": e.to_string(),
                        }),
                    );
                    std::thread::sleep(self.retry.delay_for(retry));
                    retry += 1;
                }
                Err(e) => break Err(e),
            }
        };
        let elapsed = start.elapsed().as_millis() as u64;
        let mut payload = json!({
            "purpose": purpose,
            "backend": self.backend.name(),
            "prompt_digest": digest,
            "attempts": retry + 1,
        });
        match &result {
            Ok(c) => {
                payload["reply_digest"] = json!(fingerprint::digest(&c.text));
                payload["prompt_tokens"] = json!(c.prompt_tokens);
                payload["completion_tokens"] = json!(c.completion_tokens);
            }
            Err(e) => payload["error"] = json!(e.to_string()),
        }
        if self.tracer.full_text() {
            payload["prompt"] = json!(prompt);
            if let Ok(c) = &result {
                payload["reply"] = json!(c.text);
            }
        }
        self.tracer
            .record_timed(TraceKind::ModelCall, payload, Some(elapsed));
        result.map(|c| c.text.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        replies: Mutex<Vec<Result<Completion, ModelError>>>,
    }

    impl ChatBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _: &[ChatMessage]) -> Result<Completion, ModelError> {
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn client(replies: Vec<Result<Completion, ModelError>>) -> (ModelClient, Tracer) {
        let tracer = Tracer::new("t");
        let backend = Arc::new(Flaky {
            replies: Mutex::new(replies),
        });
        (
            ModelClient::new(backend, RetryPolicy::no_delay(), tracer.clone()),
            tracer,
        )
    }

    fn status(code: u16) -> Result<Completion, ModelError> {
        Err(ModelError::Status {
            status: code,
            body: String::new(),
        })
    }

    #[test]
    fn retries_then_succeeds() {
        let (c, t) = client(vec![status(500), status(500), Ok(Completion::text(" hi "))]);
        assert_eq!(c.complete("p", &[ChatMessage::user("x")]).unwrap(), "hi");
        let retries = t
            .events()
            .iter()
            .filter(|e| e.payload_str("reason") == Some("model-retry"))
            .count();
        assert_eq!(retries, 2);
        assert_eq!(t.count(TraceKind::ModelCall), 1);
    }

    #[test]
    fn gives_up_after_three_failures() {
        let (c, t) = client(vec![
            status(503),
            status(502),
            status(500),
            Ok(Completion::text("late")),
        ]);
        assert!(matches!(
            c.complete("p", &[ChatMessage::user("x")]),
            Err(ModelError::Status { status: 500, .. })
        ));
        let call = &t.events()[2];
        assert_eq!(call.kind, TraceKind::ModelCall);
        assert_eq!(call.payload["attempts"], 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (c, t) = client(vec![status(400), Ok(Completion::text("x"))]);
        assert!(c.complete("p", &[ChatMessage::user("x")]).is_err());
        assert_eq!(t.count(TraceKind::Warning), 0);
    }

    #[test]
    fn empty_reply_is_an_error() {
        let (c, _) = client(vec![Ok(Completion::text("  \n"))]);
        assert_eq!(
            c.complete("p", &[ChatMessage::user("x")]),
            Err(ModelError::EmptyReply)
        );
    }

    #[test]
    fn rejects_empty_requests() {
        let (c, _) = client(vec![]);
        assert!(matches!(
            c.complete("p", &[]),
            Err(ModelError::InvalidRequest(_))
        ));
        assert!(matches!(
            c.complete("p", &[ChatMessage::user(" ")]),
            Err(ModelError::InvalidRequest(_))
        ));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_for(0), Duration::from_millis(500));
        assert_eq!(p.delay_for(1), Duration::from_millis(1000));
    }
}
