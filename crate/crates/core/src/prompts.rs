//! Prompt templates.
//!
//! Every user message starts with a marker line such as
//! `### manager:plan` so scripted backends can route on it.

use crate::llm::ChatMessage;

pub const MANAGER_QUERY: &str = "### manager:query";
pub const MANAGER_FUSION: &str = "### manager:fusion";
pub const MANAGER_PLAN: &str = "### manager:plan";
pub const MANAGER_REPLAN: &str = "### manager:replan";
pub const WORKER_ACTION: &str = "### worker:action";
pub const WORKER_REFLECT: &str = "### worker:reflect";
pub const EVALUATOR_EPISODE: &str = "### evaluator:episode";
pub const EVALUATOR_TASK: &str = "### evaluator:task";
pub const EXPLORER_TASKS: &str = "### explorer:tasks";

/// Appended to a prompt when the previous reply could not be parsed.
pub const FORMAT_REMINDER: &str = "### format-retry";

const MANAGER_SYSTEM: &str = "You are the manager of a desktop automation agent. \
You read the user's task and the current screen, gather knowledge, and break the \
task into subtasks that a worker can carry out one after another.";

const WORKER_SYSTEM: &str = "You are the worker of a desktop automation agent. \
You complete one subtask by issuing exactly one action per turn against the \
elements listed in the current screen.";

const EVALUATOR_SYSTEM: &str = "You review finished work of a desktop automation \
agent and write short, reusable summaries of what worked.";

pub const ACTION_API: &str = "\
agent.click(element_id, num_clicks=1, button_type=\"left\", hold_keys=[])
agent.type(text, element_id=None, overwrite=False, enter=False)
agent.scroll(element_id, clicks)
agent.hotkey(keys)
agent.hold_and_press(hold_keys, press_keys)
agent.drag_and_drop(drag_from_id, drop_on_id, hold_keys=[])
agent.save_to_buffer(text)
agent.switch_applications(app_code)
agent.wait(time)
agent.done()
agent.fail()";

fn join_or(lines: &[String], empty: &str) -> String {
    if lines.is_empty() {
        empty.to_string()
    } else {
        lines.join("\n")
    }
}

pub fn manager_query(instruction: &str, screen: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(MANAGER_SYSTEM),
        ChatMessage::user(format!(
            "{MANAGER_QUERY}\nTask: {instruction}\n\nCurrent screen:\n{screen}\n\
             Write one short how-to question that would help complete this task in the \
             application shown, e.g. \"How to change the line spacing in LibreOffice Writer\". \
             Reply with the question only."
        )),
    ]
}

pub fn manager_fusion(
    instruction: &str,
    web: &str,
    experience: Option<(&str, &str)>,
) -> Vec<ChatMessage> {
    let experience = match experience {
        Some((outcome, summary)) => {
            format!("A similar past task ({outcome}):\n{summary}")
        }
        None => "A similar past task: none".to_string(),
    };
    let web = if web.trim().is_empty() { "none" } else { web };
    vec![
        ChatMessage::system(MANAGER_SYSTEM),
        ChatMessage::user(format!(
            "{MANAGER_FUSION}\nTask: {instruction}\n\nWeb knowledge:\n{web}\n\n{experience}\n\n\
             Combine what is relevant into concise guidance for this task. If the past \
             task failed, point out what to avoid."
        )),
    ]
}

pub fn manager_plan(instruction: &str, guidance: &str, screen: &str) -> Vec<ChatMessage> {
    let guidance = if guidance.trim().is_empty() {
        "none"
    } else {
        guidance
    };
    vec![
        ChatMessage::system(MANAGER_SYSTEM),
        ChatMessage::user(format!(
            "{MANAGER_PLAN}\nTask: {instruction}\n\nGuidance:\n{guidance}\n\nCurrent screen:\n{screen}\n\
             {PLAN_FORMAT}"
        )),
    ]
}

pub fn manager_replan(
    instruction: &str,
    guidance: &str,
    screen: &str,
    completed: &[String],
    failure: &str,
) -> Vec<ChatMessage> {
    let guidance = if guidance.trim().is_empty() {
        "none"
    } else {
        guidance
    };
    vec![
        ChatMessage::system(MANAGER_SYSTEM),
        ChatMessage::user(format!(
            "{MANAGER_REPLAN}\nTask: {instruction}\n\nGuidance:\n{guidance}\n\n\
             Subtasks already completed:\n{}\n\nThe current subtask did not finish:\n{failure}\n\n\
             Current screen:\n{screen}\n\
             Plan only the remaining work, starting from the current screen.\n{PLAN_FORMAT}",
            join_or(completed, "none"),
        )),
    ]
}

const PLAN_FORMAT: &str = "Reply with a numbered list, one subtask per item, in the form\n\
1. TITLE: <short subtask title> CONTEXT: <details the worker needs>";

pub struct WorkerPrompt<'a> {
    pub instruction: &'a str,
    pub subtask: &'a str,
    pub context: &'a str,
    pub position: (usize, usize),
    pub remaining: &'a [String],
    pub experience: Option<&'a str>,
    pub reflection: Option<&'a str>,
    pub history: &'a [String],
    pub earlier: usize,
    pub feedback: Option<&'a str>,
    pub buffer: Option<&'a str>,
    pub screen: &'a str,
}

pub fn worker_action(p: &WorkerPrompt<'_>) -> Vec<ChatMessage> {
    let mut text = format!(
        "{WORKER_ACTION}\nTask: {}\nSubtask {} of {}: {}\nContext: {}\n",
        p.instruction, p.position.0, p.position.1, p.subtask, p.context
    );
    if !p.remaining.is_empty() {
        text.push_str(&format!("Later subtasks: {}\n", p.remaining.join("; ")));
    }
    if let Some(e) = p.experience {
        text.push_str(&format!("\nExperience from a similar subtask:\n{e}\n"));
    }
    if let Some(r) = p.reflection {
        text.push_str(&format!("\nReflection on your progress:\n{r}\n"));
    }
    text.push_str("\nPrevious actions:\n");
    if p.earlier > 0 {
        text.push_str(&format!("({} earlier actions omitted)\n", p.earlier));
    }
    text.push_str(&join_or(p.history, "none"));
    text.push('\n');
    if let Some(f) = p.feedback {
        text.push_str(&format!("\nYour previous action was rejected: {f}\n"));
    }
    if let Some(b) = p.buffer {
        text.push_str(&format!("\nBuffer: {b}\n"));
    }
    text.push_str(&format!(
        "\nCurrent screen:\n{}\nAvailable actions:\n{ACTION_API}\n\n\
         Reply with four sections:\nSTATUS CHECK: <is the subtask finished?>\n\
         OBSERVATION ANALYSIS: <what the screen shows>\nSEMANTIC ACTION: <the next step in words>\n\
         GROUNDED ACTION: <exactly one agent.* call>\n\
         Use agent.done() when the subtask is complete and agent.fail() if it cannot be done.",
        p.screen
    ));
    vec![ChatMessage::system(WORKER_SYSTEM), ChatMessage::user(text)]
}

pub fn worker_reflect(subtask: &str, history: &[String], screen: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(WORKER_SYSTEM),
        ChatMessage::user(format!(
            "{WORKER_REFLECT}\nSubtask: {subtask}\n\nActions so far:\n{}\n\nCurrent screen:\n{screen}\n\
             Is the worker making progress, repeating itself, or stuck? Give brief advice.",
            join_or(history, "none")
        )),
    ]
}

pub fn evaluator_episode(subtask: &str, context: &str, steps: &[String]) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(EVALUATOR_SYSTEM),
        ChatMessage::user(format!(
            "{EVALUATOR_EPISODE}\nSubtask: {subtask}\nContext: {context}\n\nSteps taken:\n{}\n\n\
             Summarize the successful plan as a short step-by-step recipe that would \
             work again, naming elements by their labels.",
            join_or(steps, "none")
        )),
    ]
}

pub fn evaluator_task(
    instruction: &str,
    subtasks: &[String],
    steps: &[String],
    outcome: &str,
) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(EVALUATOR_SYSTEM),
        ChatMessage::user(format!(
            "{EVALUATOR_TASK}\nTask: {instruction}\nOutcome: {outcome}\n\nSubtasks:\n{}\n\n\
             Steps taken:\n{}\n\nSummarize the experience in a few sentences: the approach \
             and, if it failed, where it went wrong.",
            join_or(subtasks, "none"),
            join_or(steps, "none")
        )),
    ]
}

pub fn explorer_tasks(apps: &[&str], screen: &str, n: usize) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(EVALUATOR_SYSTEM),
        ChatMessage::user(format!(
            "{EXPLORER_TASKS}\nApplications: {}\n\nCurrent screen:\n{screen}\n\
             Propose {n} distinct, realistic tasks a user might ask for in these \
             applications. Reply with a numbered list, one task per line.",
            apps.join(", ")
        )),
    ]
}

/// Adds the reminder used when re-asking after an unparseable reply.
pub fn with_format_reminder(
    mut messages: Vec<ChatMessage>,
    reply: &str,
    problem: &str,
) -> Vec<ChatMessage> {
    messages.push(ChatMessage::assistant(reply));
    messages.push(ChatMessage::user(format!(
        "{FORMAT_REMINDER}\nYour reply could not be used: {problem}\nAnswer again in exactly the requested format."
    )));
    messages
}
