use thiserror::Error;

use crate::llm::{ModelClient, ModelError};
use crate::prompts;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("exploration task generation failed: {0}")]
    Model(#[from] ModelError),
    #[error("the reply contained no tasks")]
    NoTasks,
    #[error("cannot observe the exploration desktop: {0}")]
    Env(#[from] crate::env_sim::EnvError),
}

/// Extracts list items (`1. ...`, `2) ...`, `- ...`) from a reply, dropping
/// duplicates, and keeps at most `n`.
pub fn parse_task_list(reply: &str, n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in reply.lines() {
        let line = line.trim();
        let digits = line.chars().take_while(char::is_ascii_digit).count();
        let item = if digits > 0 {
            line[digits..]
                .strip_prefix('.')
                .or_else(|| line[digits..].strip_prefix(')'))
        } else {
            line.strip_prefix("- ").or_else(|| line.strip_prefix("* "))
        };
        let Some(item) = item.map(str::trim).filter(|s| !s.is_empty()) else {
            continue;
        };
        if !out.iter().any(|t| t.eq_ignore_ascii_case(item)) {
            out.push(item.to_string());
        }
    }
    out.truncate(n);
    out
}

/// Asks the model for up to `n` tasks to try in the given applications.
/// Fewer than `n` is accepted (and logged); none is an error.
pub fn generate_exploration_tasks(
    client: &ModelClient,
    apps: &[&str],
    screen: &str,
    n: usize,
) -> Result<Vec<String>, ExploreError> {
    let reply = client.complete("explorer.tasks", &prompts::explorer_tasks(apps, screen, n))?;
    let tasks = parse_task_list(&reply, n);
    if tasks.is_empty() {
        return Err(ExploreError::NoTasks);
    }
    if tasks.len() < n {
        client.tracer().warn(
            "few-exploration-tasks",
            format!("asked for {n}, got {}", tasks.len()),
        );
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_items() {
        let reply = "Here are some tasks:\n1. Open the inbox\n2) Archive a message\n- Open the inbox\n\n3. Empty trash\n10. Sort by date";
        assert_eq!(
            parse_task_list(reply, 10),
            vec![
                "Open the inbox",
                "Archive a message",
                "Empty trash",
                "Sort by date"
            ]
        );
        assert_eq!(parse_task_list(reply, 2).len(), 2);
        assert!(parse_task_list("no list here", 3).is_empty());
    }
}
