//! The numbered subtask list the manager replies with.
//!
//! ```text
//! 1. TITLE: Open Account Settings CONTEXT: Use the menu in the top bar.
//! 2. TITLE: Remove the account CONTEXT: Select it, then Account Actions.
//! ```
//!
//! Items are numbered from 1 without gaps and every item carries both
//! markers (the context may be empty). Lines before the first item are
//! ignored; later lines that do not start an item continue the previous one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub title: String,
    pub context: String,
}

impl Subtask {
    pub fn new(title: impl Into<String>, context: impl Into<String>) -> Self {
        Subtask {
            title: title.into(),
            context: context.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("plan line {line}: {message}")]
pub struct PlanParseError {
    pub line: usize,
    pub message: String,
}

const TITLE: &str = "TITLE:";
const CONTEXT: &str = "CONTEXT:";

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_plan(subtasks: &[Subtask]) -> String {
    let mut out = String::new();
    for (i, s) in subtasks.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}. {TITLE} {} {CONTEXT} {}",
            i + 1,
            squash(&s.title),
            squash(&s.context)
        );
    }
    out
}

/// `Some((number, rest))` when the line starts with `N.`.
fn item_start(line: &str) -> Option<(u64, &str)> {
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix('.')?;
    Some((line[..digits].parse().ok()?, rest))
}

pub fn parse_plan(text: &str) -> Result<Vec<Subtask>, PlanParseError> {
    let mut out: Vec<(String, Option<String>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: String| PlanParseError {
            line: i + 1,
            message,
        };
        match item_start(line) {
            Some((n, rest)) => {
                let expected = out.len() as u64 + 1;
                if n != expected {
                    return Err(err(format!("expected item {expected}, found {n}")));
                }
                let rest = rest.trim_start();
                let body = rest
                    .strip_prefix(TITLE)
                    .ok_or_else(|| err(format!("item {n} does not start with {TITLE}")))?;
                let (title, context) = match body.find(CONTEXT) {
                    Some(p) => (&body[..p], Some(body[p + CONTEXT.len()..].to_string())),
                    None => (body, None),
                };
                if title.trim().is_empty() {
                    return Err(err(format!("item {n} has an empty title")));
                }
                out.push((title.to_string(), context));
            }
            None if line.is_empty() => {}
            None => {
                let Some((title, context)) = out.last_mut() else {
                    continue;
                };
                // Continuation text joins whichever field is open.
                match context {
                    Some(c) => {
                        c.push(' ');
                        c.push_str(line);
                    }
                    None => match line.find(CONTEXT) {
                        Some(p) => {
                            title.push(' ');
                            title.push_str(&line[..p]);
                            *context = Some(line[p + CONTEXT.len()..].to_string());
                        }
                        None => {
                            title.push(' ');
                            title.push_str(line);
                        }
                    },
                }
            }
        }
    }
    if let Some(n) = out.iter().position(|(_, c)| c.is_none()) {
        return Err(PlanParseError {
            line: text.lines().count().max(1),
            message: format!("item {} has no {CONTEXT}", n + 1),
        });
    }
    if out.is_empty() {
        return Err(PlanParseError {
            line: text.lines().count().max(1),
            message: "no numbered subtasks found".into(),
        });
    }
    Ok(out
        .into_iter()
        .map(|(t, c)| Subtask::new(squash(&t), squash(&c.unwrap_or_default())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_with_preamble_and_continuations() {
        let text = "Here is the plan:\n\n1. TITLE: Open Account Settings CONTEXT: Use the\n   Edit menu.\n2. TITLE: Remove\n   the account CONTEXT: Confirm the dialog.\n";
        let plan = parse_plan(text).unwrap();
        assert_eq!(
            plan,
            vec![
                Subtask::new("Open Account Settings", "Use the Edit menu."),
                Subtask::new("Remove the account", "Confirm the dialog."),
            ]
        );
    }

    #[test]
    fn context_may_be_empty_but_not_missing() {
        let plan = parse_plan("1. TITLE: Just do it CONTEXT:").unwrap();
        assert_eq!(plan, vec![Subtask::new("Just do it", "")]);
        let err = parse_plan("1. TITLE: a CONTEXT: b\n2. TITLE: c").unwrap_err();
        assert!(err.message.contains("item 2 has no CONTEXT:"));
    }

    #[test]
    fn rejects_malformed_plans() {
        for (text, needle) in [
            ("", "no numbered"),
            ("Sure, I can help.", "no numbered"),
            ("1. TITLE: a\n3. TITLE: b", "expected item 2"),
            ("2. TITLE: a", "expected item 1"),
            ("1. Open settings", "TITLE:"),
            ("1. TITLE: Open settings", "no CONTEXT:"),
            ("1. TITLE:  CONTEXT: x", "empty title"),
        ] {
            let err = parse_plan(text).unwrap_err();
            assert!(err.to_string().contains(needle), "{text:?}: {err}");
        }
    }

    fn field() -> impl Strategy<Value = String> {
        proptest::collection::vec("[A-Za-z0-9,'()]{1,8}", 1..6).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            items in proptest::collection::vec((field(), proptest::option::of(field())), 1..8)
        ) {
            let plan: Vec<Subtask> = items
                .into_iter()
                .map(|(t, c)| Subtask::new(t, c.unwrap_or_default()))
                .collect();
            prop_assert_eq!(parse_plan(&render_plan(&plan)).unwrap(), plan);
        }
    }
}
