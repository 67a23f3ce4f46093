//! Deterministic backend driven by a JSON-lines script.
//!
//! Each line is a rule:
//!
//! ```text
//! {"match": "### manager:query", "reply": "How to remove an email account in Thunderbird"}
//! {"match": "fp:8c3b6a2f0e9d1c44", "reply": "..."}
//! {"match": "### worker:action", "reply": "...", "repeat": true}
//! {"match": "### worker:reflect", "error": "transport"}
//! ```
//!
//! For every prompt the first unconsumed rule whose `match` is a substring
//! of the prompt text (or whose `fp:` fingerprint equals the prompt's) is
//! used and consumed. `repeat` rules are never consumed. An `error` rule
//! simulates a failure: `transport`, `empty`, or `status:<code>`.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{prompt_text, ChatBackend, ChatMessage, Completion, ModelError};
use crate::fingerprint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub reply: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptRule {
    pub fn reply(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        ScriptRule {
            pattern: pattern.into(),
            reply: reply.into(),
            repeat: false,
            error: None,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    pub fn failing(pattern: impl Into<String>, error: impl Into<String>) -> Self {
        ScriptRule {
            error: Some(error.into()),
            ..ScriptRule::reply(pattern, "")
        }
    }

    fn matches(&self, prompt: &str, fp: u64) -> bool {
        match self.pattern.strip_prefix("fp:") {
            Some(hex) => u64::from_str_radix(hex.trim(), 16) == Ok(fp),
            None => prompt.contains(&self.pattern),
        }
    }

    fn outcome(&self) -> Result<Completion, ModelError> {
        match self.error.as_deref() {
            None => Ok(Completion::text(self.reply.clone())),
            Some("transport") => Err(ModelError::Transport("scripted transport failure".into())),
            Some("empty") => Ok(Completion::text("")),
            Some(other) => {
                let status = other
                    .strip_prefix("status:")
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(500);
                Err(ModelError::Status {
                    status,
                    body: "scripted failure".into(),
                })
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("script line {line}: {message}")]
    Rule { line: usize, message: String },
}

pub struct ScriptedBackend {
    name: String,
    rules: Vec<ScriptRule>,
    consumed: Mutex<Vec<bool>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        let consumed = Mutex::new(vec![false; rules.len()]);
        ScriptedBackend {
            name: "scripted".into(),
            rules,
            consumed,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(line).map_err(|e| ScriptError::Rule {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(hex) = rule.pattern.strip_prefix("fp:") {
                if u64::from_str_radix(hex.trim(), 16).is_err() {
                    return Err(ScriptError::Rule {
                        line: i + 1,
                        message: format!("bad fingerprint `{hex}`"),
                    });
                }
            }
            rules.push(rule);
        }
        Ok(ScriptedBackend::new(rules))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Number of one-shot rules not yet consumed.
    pub fn remaining(&self) -> usize {
        let consumed = self.consumed.lock().unwrap();
        self.rules
            .iter()
            .zip(consumed.iter())
            .filter(|(r, c)| !r.repeat && !**c)
            .count()
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, ModelError> {
        let prompt = prompt_text(messages);
        let fp = fingerprint::fingerprint(&prompt);
        let mut consumed = self.consumed.lock().unwrap();
        for (i, rule) in self.rules.iter().enumerate() {
            if consumed[i] || !rule.matches(&prompt, fp) {
                continue;
            }
            if !rule.repeat {
                consumed[i] = true;
            }
            return rule.outcome();
        }
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == super::Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("");
        Err(ModelError::ScriptExhausted {
            digest: format!("{fp:016x}"),
            preview: fingerprint::normalize(last_user).chars().take(80).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(b: &ScriptedBackend, text: &str) -> Result<String, ModelError> {
        b.complete(&[ChatMessage::user(text)]).map(|c| c.text)
    }

    #[test]
    fn rules_consume_in_order() {
        let b = ScriptedBackend::parse(
            r#"{"match": "step", "reply": "one"}
               {"match": "step", "reply": "two"}
               {"match": "other", "reply": "x"}"#,
        )
        .unwrap();
        assert_eq!(ask(&b, "other prompt").unwrap(), "x");
        assert_eq!(ask(&b, "step").unwrap(), "one");
        assert_eq!(ask(&b, "step").unwrap(), "two");
        assert!(matches!(
            ask(&b, "step"),
            Err(ModelError::ScriptExhausted { .. })
        ));
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn repeat_and_fingerprint_rules() {
        let fp = fingerprint::fingerprint("user: exact prompt\n");
        let b = ScriptedBackend::new(vec![
            ScriptRule::reply(format!("fp:{fp:016x}"), "by fingerprint"),
            ScriptRule::reply("", "anything").repeating(),
        ]);
        assert_eq!(ask(&b, "exact   prompt").unwrap(), "by fingerprint");
        assert_eq!(ask(&b, "exact prompt").unwrap(), "anything");
        assert_eq!(ask(&b, "zzz").unwrap(), "anything");
    }

    #[test]
    fn unmatched_prompt_names_digest() {
        let b = ScriptedBackend::new(vec![]);
        let err = ask(&b, "hello there").unwrap_err();
        let expected = fingerprint::digest("user: hello there\n");
        assert_eq!(
            err,
            ModelError::ScriptExhausted {
                digest: expected.clone(),
                preview: "hello there".into()
            }
        );
        assert!(err.to_string().contains(&expected));
    }

    #[test]
    fn simulated_failures() {
        let b = ScriptedBackend::new(vec![
            ScriptRule::failing("a", "transport"),
            ScriptRule::failing("a", "status:503"),
            ScriptRule::failing("a", "empty"),
        ]);
        assert!(matches!(ask(&b, "a"), Err(ModelError::Transport(_))));
        assert!(matches!(
            ask(&b, "a"),
            Err(ModelError::Status { status: 503, .. })
        ));
        assert_eq!(ask(&b, "a").unwrap(), "");
    }

    #[test]
    fn bad_script_lines() {
        assert!(matches!(
            ScriptedBackend::parse("{\"reply\": \"no match\"}"),
            Err(ScriptError::Rule { line: 1, .. })
        ));
        assert!(matches!(
            ScriptedBackend::parse("\n{\"match\": \"fp:xyz\"}"),
            Err(ScriptError::Rule { line: 2, .. })
        ));
    }
}
