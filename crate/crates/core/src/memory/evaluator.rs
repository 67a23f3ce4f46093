use crate::llm::{ModelClient, ModelError};
use crate::prompts;

use super::TaskOutcome;

/// Turns finished trajectories into memory summaries.
pub struct SelfEvaluator {
    client: ModelClient,
}

impl SelfEvaluator {
    pub fn new(client: ModelClient) -> Self {
        SelfEvaluator { client }
    }

    /// Summary of one subtask that ended in `done`, stored as its episodic
    /// plan.
    pub fn summarize_episode(
        &self,
        subtask: &str,
        context: &str,
        steps: &[String],
    ) -> Result<String, ModelError> {
        self.client.complete(
            "evaluator.episode",
            &prompts::evaluator_episode(subtask, context, steps),
        )
    }

    /// Summary of a whole task attempt, successful or not.
    pub fn summarize_task(
        &self,
        instruction: &str,
        subtasks: &[String],
        steps: &[String],
        outcome: TaskOutcome,
    ) -> Result<String, ModelError> {
        self.client.complete(
            "evaluator.task",
            &prompts::evaluator_task(instruction, subtasks, steps, outcome.as_str()),
        )
    }
}
