mod common;

use common::*;
use deskpilot::memory::TaskOutcome;
use deskpilot::trace::TraceKind;
use deskpilot::worker::Terminal;

#[test]
fn thunderbird_account_removal_succeeds() {
    let agent = agent("thunderbird_remove_account");
    let report = agent.run_task(&task("thunderbird_remove_account"));
    assert_eq!(report.error, None);
    assert_eq!(report.outcome, TaskOutcome::Success);
    assert_eq!(report.evaluator_passed, Some(true));
    assert_eq!(report.replans, 0);
    assert_eq!(report.steps, 5);
    let terminals: Vec<_> = report.subtasks.iter().map(|s| s.terminal).collect();
    assert_eq!(terminals, vec![Some(Terminal::Done), Some(Terminal::Done)]);
    assert_eq!(agent.memory().narrative().len(), 1);
    assert_eq!(agent.memory().episodic().len(), 2);
}

#[test]
fn failed_subtask_triggers_one_replan() {
    let agent = agent("thunderbird_replan");
    let report = agent.run_task(&task("thunderbird_remove_account"));
    assert_eq!(report.error, None);
    assert_eq!(report.outcome, TaskOutcome::Success);
    assert_eq!(report.replans, 1);
    assert_eq!(report.subtasks[0].terminal, Some(Terminal::Fail));
    assert_eq!(report.trace.count(TraceKind::Replan), 2);
}

#[test]
fn endless_worker_hits_step_limit() {
    let agent = agent("never_terminating");
    let report = agent.run_task(&task("thunderbird_remove_account"));
    assert_eq!(report.error, None, "{report:?}");
    assert_eq!(report.outcome, TaskOutcome::Failure);
    assert!(report
        .subtasks
        .iter()
        .all(|s| s.terminal == Some(Terminal::StepLimit)));
    let narrative = agent.memory().narrative();
    assert_eq!(narrative.len(), 1);
    assert_eq!(narrative.records()[0].outcome, TaskOutcome::Failure);
    assert!(agent.memory().episodic().is_empty());
}

#[test]
fn suite_runs_every_task() {
    let agent = agent("suite");
    let (suite, reports) = agent.run_suite(&suite_tasks());
    for r in &reports {
        assert_eq!(
            r.outcome,
            TaskOutcome::Success,
            "{}: {:?}",
            r.task_id,
            r.error
        );
    }
    assert_eq!(suite.success_rate, 1.0);
    assert_eq!(suite.rows.len(), 4);
}

#[test]
fn env_steps_match_trace_and_respect_limits() {
    for script_name in [
        "thunderbird_remove_account",
        "thunderbird_replan",
        "never_terminating",
    ] {
        let agent = agent(script_name);
        let report = agent.run_task(&task("thunderbird_remove_account"));
        let events = report.trace.events();
        let env_steps = events
            .iter()
            .filter(|e| e.kind == TraceKind::EnvStep)
            .count();
        assert_eq!(report.steps, env_steps, "{script_name}");
        assert!(report.steps <= agent.config().max_steps_total);
        let replans = events
            .iter()
            .filter(|e| e.kind == TraceKind::Replan && e.payload["initial"] == false)
            .count();
        assert_eq!(replans, report.replans);
        assert!(replans <= agent.config().max_replans);
        let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
        assert!(
            seqs.windows(2).all(|w| w[0] < w[1]),
            "{script_name}: unordered trace"
        );
    }
}

#[test]
fn suite_rerun_is_identical_modulo_timing() {
    let (a, _) = agent("suite").run_suite(&suite_tasks());
    let (b, _) = agent("suite").run_suite(&suite_tasks());
    assert_eq!(a.without_timing(), b.without_timing());
}
