//! Deterministic simulated desktop.
//!
//! [`SimEnv`] loads an [`EnvTask`], renders the focused application as an
//! accessibility tree (plus OCR blocks), and interprets event scripts by
//! hit-testing pointer coordinates. [`Environment`] is the seam a real
//! desktop adapter would implement.

mod task;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::aci::{
    augment_with_ocr, tag_tree, BoundingBox, EventScript, InputEvent, Observation, OcrBlock,
    RawNode, RawTree, DEFAULT_IOU_THRESHOLD,
};

pub use task::{
    AppSpec, Effect, EnvTask, OcrSpec, Rule, Selector, TaskLoadError, Transition, Trigger,
    TASK_SCHEMA_VERSION,
};

const HIDDEN: &str = "hidden";
const FOCUSED: &str = "focused";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("environment has not been reset with a task")]
    NotReset,
    #[error("event script is unbalanced (a press without its release)")]
    Unbalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    pub applied: bool,
    /// Simulated milliseconds elapsed since reset.
    pub clock_ms: u64,
}

pub trait Environment {
    fn reset(&mut self, task: &EnvTask) -> Result<Observation, EnvError>;
    fn observe(&self) -> Result<Observation, EnvError>;
    fn step(&mut self, script: &EventScript) -> Result<StepResult, EnvError>;
    /// Runs the task's evaluator against the current state. `false` when
    /// the task has no evaluator rules or the environment was never reset.
    fn evaluate(&self, task: &EnvTask) -> bool;
    /// Contents of the shared text buffer.
    fn buffer(&self) -> Option<String>;
}

#[derive(Debug, Clone)]
struct SimNode {
    anchor: Option<String>,
    role: String,
    name: String,
    bbox: BoundingBox,
    states: BTreeSet<String>,
    value: Option<String>,
    removed: bool,
    children: Vec<usize>,
}

impl SimNode {
    fn hidden(&self) -> bool {
        self.states.contains(HIDDEN)
    }

    fn editable(&self) -> bool {
        self.value.is_some()
            || self.states.contains("editable")
            || ["text", "entry", "edit", "field", "combo"]
                .iter()
                .any(|r| self.role.contains(r))
    }
}

#[derive(Debug, Clone)]
struct SimApp {
    nodes: Vec<SimNode>,
    roots: Vec<usize>,
    ocr: Vec<OcrBlock>,
}

impl SimApp {
    fn build(raw: &RawTree) -> Self {
        fn add(nodes: &mut Vec<SimNode>, raw: &RawNode) -> usize {
            let idx = nodes.len();
            nodes.push(SimNode {
                anchor: raw.anchor.clone(),
                role: raw.role.clone(),
                name: raw.name.clone(),
                bbox: raw.bbox,
                states: raw.states.clone(),
                value: raw.value.clone(),
                removed: false,
                children: Vec::new(),
            });
            let children = raw.children.iter().map(|c| add(nodes, c)).collect();
            nodes[idx].children = children;
            idx
        }
        let mut nodes = Vec::new();
        let roots = raw.roots.iter().map(|r| add(&mut nodes, r)).collect();
        SimApp {
            nodes,
            roots,
            ocr: Vec::new(),
        }
    }

    /// Live, visible nodes in pre-order.
    fn visible(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.roots.iter().rev().copied().collect();
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if n.removed || n.hidden() {
                continue;
            }
            out.push(i);
            stack.extend(n.children.iter().rev());
        }
        out
    }

    /// The last visible node in pre-order containing the point, which is the
    /// deepest and front-most one.
    fn hit(&self, x: i32, y: i32) -> Option<usize> {
        self.visible()
            .into_iter()
            .rfind(|&i| self.nodes[i].bbox.contains(x, y))
    }

    fn find(&self, anchor: &str) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.anchor.as_deref() == Some(anchor))
    }

    fn raw(&self, focus: Option<usize>) -> RawTree {
        fn build(app: &SimApp, i: usize, focus: Option<usize>) -> Option<RawNode> {
            let n = &app.nodes[i];
            if n.removed || n.hidden() {
                return None;
            }
            let mut states = n.states.clone();
            if focus == Some(i) {
                states.insert(FOCUSED.into());
            }
            Some(RawNode {
                role: n.role.clone(),
                name: n.name.clone(),
                bbox: n.bbox,
                states,
                value: n.value.clone(),
                anchor: n.anchor.clone(),
                children: n
                    .children
                    .iter()
                    .filter_map(|&c| build(app, c, focus))
                    .collect(),
            })
        }
        RawTree::new(
            self.roots
                .iter()
                .filter_map(|&r| build(self, r, focus))
                .collect(),
        )
    }

    fn subtree(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut k = 0;
        while k < out.len() {
            out.extend(self.nodes[out[k]].children.iter().copied());
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone)]
struct SimState {
    apps: BTreeMap<String, SimApp>,
    focused_app: String,
    focus: Option<(String, usize)>,
    pointer: (i32, i32),
    pressed_at: Option<(String, Option<usize>)>,
    held_keys: Vec<String>,
    select_all: bool,
    buffer: Option<String>,
    clock_ms: u64,
    fired: BTreeSet<usize>,
}

enum Event<'a> {
    Click(Option<usize>),
    Drop {
        source: Option<usize>,
        target: Option<usize>,
    },
    Typed(usize),
    Key(&'a str, Option<usize>),
}

pub struct SimEnv {
    iou_threshold: f64,
    task: Option<EnvTask>,
    state: Option<SimState>,
}

impl Default for SimEnv {
    fn default() -> Self {
        SimEnv::new(DEFAULT_IOU_THRESHOLD)
    }
}

fn canonical_key(k: &str) -> String {
    let k = k.trim().to_ascii_lowercase();
    match k.as_str() {
        "control" => "ctrl".into(),
        "return" => "enter".into(),
        "option" => "alt".into(),
        "command" | "win" | "super" | "meta" => "cmd".into(),
        "del" => "delete".into(),
        "esc" => "escape".into(),
        _ => k,
    }
}

const MODIFIERS: [&str; 4] = ["ctrl", "alt", "shift", "cmd"];

/// `ctrl+shift+t` style chord with modifiers in a fixed order.
fn chord<'a>(keys: impl IntoIterator<Item = &'a str>) -> String {
    let keys: Vec<String> = keys.into_iter().map(canonical_key).collect();
    let mut parts: Vec<&str> = MODIFIERS
        .iter()
        .copied()
        .filter(|m| keys.iter().any(|k| k == m))
        .collect();
    let mut rest: Vec<&str> = keys
        .iter()
        .map(String::as_str)
        .filter(|k| !MODIFIERS.contains(k))
        .collect();
    rest.dedup();
    parts.extend(rest);
    parts.join("+")
}

impl SimEnv {
    pub fn new(iou_threshold: f64) -> Self {
        SimEnv {
            iou_threshold,
            task: None,
            state: None,
        }
    }

    fn state(&self) -> Result<&SimState, EnvError> {
        self.state.as_ref().ok_or(EnvError::NotReset)
    }

    /// Element tag of the node carrying `anchor` in the current observation,
    /// if visible. Handy for tests and fixtures.
    pub fn tag_of(&self, anchor: &str) -> Option<u32> {
        let st = self.state.as_ref()?;
        let app = &st.apps[&st.focused_app];
        let target = app.find(anchor)?;
        app.visible()
            .iter()
            .position(|&i| i == target)
            .map(|p| p as u32)
    }

    pub fn focused_app(&self) -> Option<&str> {
        self.state.as_ref().map(|s| s.focused_app.as_str())
    }

    fn dispatch(&mut self, event: Event<'_>) {
        let task = self.task.as_ref().expect("reset before step");
        let st = self.state.as_mut().expect("reset before step");
        let app_code = st.focused_app.clone();
        let app = &st.apps[&app_code];
        let anchor_of = |i: Option<usize>| i.and_then(|i| app.nodes[i].anchor.clone());
        let mut effects = Vec::new();
        for (ti, t) in task.transitions.iter().enumerate() {
            if t.once && st.fired.contains(&ti) {
                continue;
            }
            let hit = match (&event, t.on) {
                (Event::Click(n), Trigger::Click) => anchor_of(*n) == t.target,
                (Event::Drop { source, target }, Trigger::Drop) => {
                    anchor_of(*target) == t.target
                        && (t.source.is_none() || anchor_of(*source) == t.source)
                }
                (Event::Typed(n), Trigger::Type) => {
                    anchor_of(Some(*n)) == t.target
                        && (t.value.is_none() || app.nodes[*n].value == t.value)
                }
                (Event::Key(c, focus), Trigger::Key) => {
                    t.key.as_deref().map(|k| chord(k.split('+'))) == Some(c.to_string())
                        && (t.target.is_none() || anchor_of(*focus) == t.target)
                }
                _ => false,
            };
            if hit {
                st.fired.insert(ti);
                effects.extend(t.effects.iter().cloned());
            }
        }
        for e in effects {
            apply_effect(st, &e);
        }
    }

    fn focused_node(&self) -> Option<usize> {
        let st = self.state.as_ref()?;
        match &st.focus {
            Some((app, i)) if *app == st.focused_app => {
                let n = &st.apps[app].nodes[*i];
                (!n.removed && !n.hidden()).then_some(*i)
            }
            _ => None,
        }
    }

    fn handle(&mut self, ev: &InputEvent) {
        match ev {
            InputEvent::PointerMove { x, y } => self.state.as_mut().unwrap().pointer = (*x, *y),
            InputEvent::ButtonPress { .. } => {
                let st = self.state.as_mut().unwrap();
                let (x, y) = st.pointer;
                let hit = st.apps[&st.focused_app].hit(x, y);
                st.pressed_at = Some((st.focused_app.clone(), hit));
            }
            InputEvent::ButtonRelease { .. } => {
                let st = self.state.as_mut().unwrap();
                let (x, y) = st.pointer;
                let code = st.focused_app.clone();
                let target = st.apps[&code].hit(x, y);
                let source = match st.pressed_at.take() {
                    Some((app, n)) if app == code => n,
                    _ => None,
                };
                st.select_all = false;
                if source == target {
                    st.focus = target.map(|t| (code, t));
                    self.dispatch(Event::Click(target));
                } else {
                    self.dispatch(Event::Drop { source, target });
                }
            }
            InputEvent::KeyPress { key } => {
                let key = canonical_key(key);
                let st = self.state.as_mut().unwrap();
                if !st.held_keys.contains(&key) {
                    st.held_keys.push(key.clone());
                }
                if MODIFIERS.contains(&key.as_str()) {
                    return;
                }
                let c = chord(
                    st.held_keys
                        .iter()
                        .map(String::as_str)
                        .filter(|k| MODIFIERS.contains(k))
                        .chain([key.as_str()]),
                );
                let focus = self.focused_node();
                let st = self.state.as_mut().unwrap();
                match c.as_str() {
                    "ctrl+a" => st.select_all = true,
                    "backspace" => {
                        if let Some(i) = focus {
                            let n = &mut st.apps.get_mut(&st.focused_app).unwrap().nodes[i];
                            if n.editable() {
                                let v = n.value.get_or_insert_with(String::new);
                                if st.select_all {
                                    v.clear();
                                } else {
                                    v.pop();
                                }
                            }
                        }
                        st.select_all = false;
                    }
                    _ => st.select_all = false,
                }
                self.dispatch(Event::Key(&c, focus));
            }
            InputEvent::KeyRelease { key } => {
                let key = canonical_key(key);
                self.state.as_mut().unwrap().held_keys.retain(|k| *k != key);
            }
            InputEvent::TextEmit { text } => {
                let Some(i) = self.focused_node() else {
                    return;
                };
                let st = self.state.as_mut().unwrap();
                let n = &mut st.apps.get_mut(&st.focused_app).unwrap().nodes[i];
                if !n.editable() {
                    return;
                }
                let v = n.value.get_or_insert_with(String::new);
                if st.select_all {
                    v.clear();
                }
                v.push_str(text);
                st.select_all = false;
                self.dispatch(Event::Typed(i));
            }
            InputEvent::WheelScroll { .. } => {}
            InputEvent::AppActivate { code } => {
                let st = self.state.as_mut().unwrap();
                if st.apps.contains_key(code) {
                    st.focused_app = code.clone();
                }
            }
            InputEvent::Sleep { ms } => {
                let st = self.state.as_mut().unwrap();
                st.clock_ms = st.clock_ms.saturating_add(*ms);
            }
            InputEvent::BufferStore { text } => {
                self.state.as_mut().unwrap().buffer = Some(text.clone());
            }
        }
    }
}

fn locate(st: &SimState, anchor: &str) -> Option<(String, usize)> {
    st.apps
        .iter()
        .find_map(|(code, app)| app.find(anchor).map(|i| (code.clone(), i)))
}

fn apply_effect(st: &mut SimState, effect: &Effect) {
    if let Effect::SwitchApp { app } = effect {
        st.focused_app = app.clone();
        return;
    }
    let Some((code, i)) = effect.node().and_then(|a| locate(st, a)) else {
        return;
    };
    let app = st.apps.get_mut(&code).unwrap();
    match effect {
        Effect::Remove { .. } => {
            let sub = app.subtree(i);
            for j in &sub {
                app.nodes[*j].removed = true;
            }
            if matches!(&st.focus, Some((c, f)) if *c == code && sub.contains(f)) {
                st.focus = None;
            }
        }
        Effect::Show { .. } => {
            app.nodes[i].states.remove(HIDDEN);
        }
        Effect::Hide { .. } => {
            app.nodes[i].states.insert(HIDDEN.into());
        }
        Effect::SetState { state, .. } => {
            app.nodes[i].states.insert(state.clone());
        }
        Effect::ClearState { state, .. } => {
            app.nodes[i].states.remove(state);
        }
        Effect::ToggleState { state, .. } => {
            let s = &mut app.nodes[i].states;
            if !s.remove(state) {
                s.insert(state.clone());
            }
        }
        Effect::SetValue { value, .. } => app.nodes[i].value = Some(value.clone()),
        Effect::SetName { name, .. } => app.nodes[i].name = name.clone(),
        Effect::Focus { .. } => {
            st.focused_app = code.clone();
            st.focus = Some((code, i));
        }
        Effect::SwitchApp { .. } => unreachable!(),
    }
}

fn matches_selector(app_code: &str, app: &SimApp, i: usize, sel: &Selector) -> bool {
    let n = &app.nodes[i];
    sel.app.as_deref().is_none_or(|a| a == app_code)
        && sel
            .node
            .as_ref()
            .is_none_or(|a| n.anchor.as_ref() == Some(a))
        && sel.role.as_ref().is_none_or(|r| *r == n.role)
        && sel.name.as_ref().is_none_or(|m| *m == n.name)
}

fn selected<'a>(st: &'a SimState, sel: &Selector) -> Vec<&'a SimNode> {
    st.apps
        .iter()
        .flat_map(|(code, app)| {
            app.visible()
                .into_iter()
                .filter(move |&i| matches_selector(code, app, i, sel))
                .map(move |i| &app.nodes[i])
        })
        .collect()
}

fn attribute(n: &SimNode, attr: &str) -> Option<String> {
    match attr {
        "value" => n.value.clone(),
        "name" => Some(n.name.clone()),
        "role" => Some(n.role.clone()),
        _ => attr
            .strip_prefix("state:")
            .map(|s| n.states.contains(s).to_string()),
    }
}

impl Environment for SimEnv {
    fn reset(&mut self, task: &EnvTask) -> Result<Observation, EnvError> {
        let mut apps: BTreeMap<String, SimApp> = task
            .apps
            .iter()
            .map(|(code, raw)| (code.clone(), SimApp::build(raw)))
            .collect();
        for (code, block) in &task.ocr {
            if let Some(app) = apps.get_mut(code) {
                app.ocr.push(block.clone());
            }
        }
        let mut focus = None;
        for (code, app) in &apps {
            if let Some(i) = app.nodes.iter().position(|n| n.states.contains(FOCUSED)) {
                focus = Some((code.clone(), i));
                break;
            }
        }
        for app in apps.values_mut() {
            for n in &mut app.nodes {
                n.states.remove(FOCUSED);
            }
        }
        self.state = Some(SimState {
            apps,
            focused_app: task.focused_app.clone(),
            focus,
            pointer: (0, 0),
            pressed_at: None,
            held_keys: Vec::new(),
            select_all: false,
            buffer: None,
            clock_ms: 0,
            fired: BTreeSet::new(),
        });
        self.task = Some(task.clone());
        self.observe()
    }

    fn observe(&self) -> Result<Observation, EnvError> {
        let st = self.state()?;
        let app = &st.apps[&st.focused_app];
        let tree = tag_tree(&app.raw(self.focused_node()));
        let tree = augment_with_ocr(&tree, &app.ocr, self.iou_threshold);
        Ok(Observation::new(tree, None))
    }

    fn step(&mut self, script: &EventScript) -> Result<StepResult, EnvError> {
        self.state()?;
        if !script.is_balanced() {
            return Err(EnvError::Unbalanced);
        }
        for ev in &script.events {
            self.handle(ev);
        }
        let st = self.state.as_mut().unwrap();
        st.held_keys.clear();
        st.pressed_at = None;
        Ok(StepResult {
            applied: true,
            clock_ms: st.clock_ms,
        })
    }

    fn evaluate(&self, task: &EnvTask) -> bool {
        let Ok(st) = self.state() else {
            return false;
        };
        if task.evaluator.is_empty() {
            return false;
        }
        task.evaluator.iter().all(|rule| match rule {
            Rule::ElementExists { selector } => !selected(st, selector).is_empty(),
            Rule::ElementAbsent { selector } => selected(st, selector).is_empty(),
            Rule::AttributeEquals {
                selector,
                attribute: attr,
                value,
            } => selected(st, selector)
                .iter()
                .any(|n| attribute(n, attr).as_ref() == Some(value)),
            Rule::BufferEquals { value } => st.buffer.as_ref() == Some(value),
        })
    }

    fn buffer(&self) -> Option<String> {
        self.state.as_ref().and_then(|s| s.buffer.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aci::{compile_action, Action, MouseButton};

    const FORM: &str = r#"
schema = 1
id = "form"
instruction = "fill the form"

[[apps]]
code = "editor"
tree = '''
window "Editor" 0 0 400 300
  text-field "Title" 10 10 200 20 value="old" #title
  button "Save" 10 40 60 20 #save
  label "Saved" 10 70 60 20 hidden #saved
  list-item "Doc" 10 100 60 20 #doc
  folder "Archive" 200 100 60 20 #archive
'''

[[apps]]
code = "files"
tree = '''
window "Files" 0 0 400 300
'''

[[transitions]]
on = "click"
target = "save"
effects = [{ op = "show", node = "saved" }]

[[transitions]]
on = "key"
key = "ctrl+s"
effects = [{ op = "show", node = "saved" }]

[[transitions]]
on = "drop"
target = "archive"
source = "doc"
effects = [{ op = "remove", node = "doc" }]

[[evaluator]]
rule = "attribute-equals"
node = "title"
attribute = "value"
value = "Report"

[[evaluator]]
rule = "element-exists"
node = "saved"
"#;

    fn env() -> (SimEnv, EnvTask, Observation) {
        let task = EnvTask::parse(FORM).unwrap();
        let mut env = SimEnv::default();
        let obs = env.reset(&task).unwrap();
        (env, task, obs)
    }

    fn act(env: &mut SimEnv, action: Action) -> Observation {
        let obs = env.observe().unwrap();
        let script = compile_action(&action, &obs).unwrap();
        env.step(&script).unwrap();
        env.observe().unwrap()
    }

    #[test]
    fn hidden_nodes_are_not_observed() {
        let (env, _, obs) = env();
        assert_eq!(obs.tree.len(), 5);
        assert!(!obs.linearized.contains("Saved"));
        assert_eq!(env.tag_of("save"), Some(2));
        assert_eq!(env.tag_of("saved"), None);
    }

    #[test]
    fn overwrite_type_then_click_save_satisfies_evaluator() {
        let (mut env, task, _) = env();
        assert!(!env.evaluate(&task));
        let obs = act(
            &mut env,
            Action::Type {
                text: "Report".into(),
                element_id: Some(1),
                overwrite: true,
                enter: false,
            },
        );
        assert!(obs.linearized.contains("value=\"Report\""));
        assert!(obs.linearized.contains("focused"));
        let save = env.tag_of("save").unwrap();
        let obs = act(&mut env, Action::click(save));
        assert!(obs.linearized.contains("\"Saved\""));
        assert!(env.evaluate(&task));
    }

    #[test]
    fn typing_appends_without_overwrite() {
        let (mut env, _, _) = env();
        let obs = act(
            &mut env,
            Action::Type {
                text: "er".into(),
                element_id: Some(1),
                overwrite: false,
                enter: false,
            },
        );
        assert_eq!(obs.element(1).unwrap().value.as_deref(), Some("older"));
    }

    #[test]
    fn hotkey_chord_fires_key_transition() {
        let (mut env, _, _) = env();
        let obs = act(
            &mut env,
            Action::Hotkey {
                keys: vec!["Control".into(), "s".into()],
            },
        );
        assert!(obs.linearized.contains("\"Saved\""));
    }

    #[test]
    fn drag_and_drop_fires_drop_transition() {
        let (mut env, _, _) = env();
        let (doc, archive) = (env.tag_of("doc").unwrap(), env.tag_of("archive").unwrap());
        let obs = act(
            &mut env,
            Action::DragAndDrop {
                drag_from_id: doc,
                drop_on_id: archive,
                hold_keys: vec![],
            },
        );
        assert!(!obs.linearized.contains("\"Doc\""));
        assert_eq!(env.tag_of("doc"), None);
    }

    #[test]
    fn switch_wait_and_buffer() {
        let (mut env, _, _) = env();
        act(
            &mut env,
            Action::SwitchApplications {
                app_code: "files".into(),
            },
        );
        assert_eq!(env.focused_app(), Some("files"));
        act(&mut env, Action::Wait { time: 1.5 });
        act(
            &mut env,
            Action::SaveToBuffer {
                text: "note".into(),
            },
        );
        assert_eq!(env.buffer().as_deref(), Some("note"));
        let r = env.step(&EventScript::default()).unwrap();
        assert_eq!(r.clock_ms, 1500);
        act(
            &mut env,
            Action::SwitchApplications {
                app_code: "nope".into(),
            },
        );
        assert_eq!(env.focused_app(), Some("files"));
    }

    #[test]
    fn clicking_empty_space_is_harmless() {
        let (mut env, _, before) = env();
        let script = EventScript {
            events: vec![
                InputEvent::PointerMove { x: 900, y: 900 },
                InputEvent::ButtonPress {
                    button: MouseButton::Left,
                },
                InputEvent::ButtonRelease {
                    button: MouseButton::Left,
                },
            ],
        };
        assert!(env.step(&script).unwrap().applied);
        assert_eq!(env.observe().unwrap(), before);
    }

    #[test]
    fn unbalanced_and_unreset() {
        let (mut env, task, _) = env();
        let bad = EventScript {
            events: vec![InputEvent::KeyPress { key: "a".into() }],
        };
        assert_eq!(env.step(&bad), Err(EnvError::Unbalanced));
        let fresh = SimEnv::default();
        assert_eq!(fresh.observe().unwrap_err(), EnvError::NotReset);
        assert!(!fresh.evaluate(&task));
    }

    #[test]
    fn reset_restores_initial_state() {
        let (mut env, task, first) = env();
        act(&mut env, Action::click(2));
        let again = env.reset(&task).unwrap();
        assert_eq!(first, again);
    }

    #[test]
    fn chords_are_canonical() {
        assert_eq!(chord(["shift", "Control", "t"]), "ctrl+shift+t");
        assert_eq!(chord(["return"]), "enter");
    }
}
