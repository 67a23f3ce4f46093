//! Task files.
//!
//! A task is one TOML document:
//!
//! ```toml
//! schema = 1
//! id = "thunderbird-remove-account"
//! instruction = "Help me to remove the account \"anonym-x2024@outlook.com\""
//! focused_app = "thunderbird"
//!
//! [[apps]]
//! code = "thunderbird"
//! tree = '''
//! window "Mozilla Thunderbird" 0 0 1280 800
//!   menu-item "Account Settings" 10 5 120 20 #acct
//!   dialog "Account Settings" 300 100 600 400 hidden #settings
//! '''
//!
//! [[transitions]]
//! on = "click"
//! target = "acct"
//! effects = [{ op = "show", node = "settings" }]
//!
//! [[evaluator]]
//! rule = "element-exists"
//! node = "settings"
//! ```
//!
//! Trees use the accessibility-tree line format; `#anchor` names a node for
//! transitions and rules, and the `hidden` flag keeps a node (and its
//! subtree) out of observations until an effect shows it.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aci::{parse_tree, BoundingBox, OcrBlock, ParseError, RawTree};

pub const TASK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TaskLoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("task document is not valid TOML: {0}")]
    Toml(String),
    #[error("unsupported task schema {found} (expected {TASK_SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("app `{app}` tree: {source}")]
    Tree { app: String, source: ParseError },
    #[error("anchor `{0}` is declared more than once")]
    DuplicateAnchor(String),
    #[error("{context} refers to unknown anchor `{anchor}`")]
    UnknownAnchor { context: String, anchor: String },
    #[error("{context} refers to unknown app `{app}`")]
    UnknownApp { context: String, app: String },
    #[error("invalid task: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    /// A press and release of any button on `target`.
    Click,
    /// Text emitted into `target`; optionally only once its value equals
    /// `value`.
    Type,
    /// A key chord such as `enter` or `ctrl+h`, optionally only while
    /// `target` has focus.
    Key,
    /// A drag released over `target`, optionally only from `source`.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Effect {
    Remove { node: String },
    Show { node: String },
    Hide { node: String },
    SetState { node: String, state: String },
    ClearState { node: String, state: String },
    ToggleState { node: String, state: String },
    SetValue { node: String, value: String },
    SetName { node: String, name: String },
    Focus { node: String },
    SwitchApp { app: String },
}

impl Effect {
    pub fn node(&self) -> Option<&str> {
        match self {
            Effect::Remove { node }
            | Effect::Show { node }
            | Effect::Hide { node }
            | Effect::SetState { node, .. }
            | Effect::ClearState { node, .. }
            | Effect::ToggleState { node, .. }
            | Effect::SetValue { node, .. }
            | Effect::SetName { node, .. }
            | Effect::Focus { node } => Some(node),
            Effect::SwitchApp { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub on: Trigger,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub value: Option<String>,
    /// Fire at most once per episode.
    #[serde(default)]
    pub once: bool,
    pub effects: Vec<Effect>,
}

/// Selects live, visible nodes. Unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selector {
    #[serde(default)]
    pub app: Option<String>,
    #[serde(default)]
    pub node: Option<String>,
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Rule {
    ElementExists {
        #[serde(flatten)]
        selector: Selector,
    },
    ElementAbsent {
        #[serde(flatten)]
        selector: Selector,
    },
    /// `attribute` is `value`, `name`, `role` or `state:<flag>` (compared
    /// against `"true"` / `"false"`).
    AttributeEquals {
        #[serde(flatten)]
        selector: Selector,
        attribute: String,
        value: String,
    },
    BufferEquals {
        value: String,
    },
}

impl Rule {
    fn selector(&self) -> Option<&Selector> {
        match self {
            Rule::ElementExists { selector }
            | Rule::ElementAbsent { selector }
            | Rule::AttributeEquals { selector, .. } => Some(selector),
            Rule::BufferEquals { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub code: String,
    pub tree: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrSpec {
    pub app: String,
    pub text: String,
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDoc {
    schema: u32,
    id: String,
    instruction: String,
    #[serde(default)]
    focused_app: Option<String>,
    apps: Vec<AppSpec>,
    #[serde(default)]
    transitions: Vec<Transition>,
    #[serde(default)]
    ocr: Vec<OcrSpec>,
    #[serde(default)]
    evaluator: Vec<Rule>,
}

/// A validated task: instruction, initial desktop, transitions, evaluator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvTask {
    pub id: String,
    pub instruction: String,
    pub focused_app: String,
    pub apps: Vec<(String, RawTree)>,
    pub transitions: Vec<Transition>,
    pub ocr: Vec<(String, OcrBlock)>,
    pub evaluator: Vec<Rule>,
}

impl EnvTask {
    pub fn parse(text: &str) -> Result<Self, TaskLoadError> {
        // Read the schema first so a version mismatch is reported as such
        // rather than as an unknown field.
        #[derive(Deserialize)]
        struct Version {
            schema: Option<u32>,
        }
        let version: Version =
            toml::from_str(text).map_err(|e| TaskLoadError::Toml(e.message().to_string()))?;
        match version.schema {
            Some(TASK_SCHEMA_VERSION) => {}
            Some(found) => return Err(TaskLoadError::Schema { found }),
            None => return Err(TaskLoadError::Invalid("missing `schema`".into())),
        }
        let doc: TaskDoc = toml::from_str(text).map_err(|e| TaskLoadError::Toml(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TaskLoadError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaskLoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Loads every `*.toml` task in `dir`, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Self>, TaskLoadError> {
        let dir = dir.as_ref();
        let io = |source| TaskLoadError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        paths.iter().map(Self::from_file).collect()
    }

    fn from_doc(doc: TaskDoc) -> Result<Self, TaskLoadError> {
        if doc.id.trim().is_empty() {
            return Err(TaskLoadError::Invalid("empty task id".into()));
        }
        if doc.instruction.trim().is_empty() {
            return Err(TaskLoadError::Invalid("empty instruction".into()));
        }
        if doc.apps.is_empty() {
            return Err(TaskLoadError::Invalid(
                "a task needs at least one app".into(),
            ));
        }
        let mut apps = Vec::new();
        let mut anchors: HashMap<String, String> = HashMap::new();
        let mut codes = BTreeSet::new();
        for app in doc.apps {
            if !codes.insert(app.code.clone()) {
                return Err(TaskLoadError::Invalid(format!(
                    "app `{}` declared twice",
                    app.code
                )));
            }
            let tree = parse_tree(&app.tree).map_err(|source| TaskLoadError::Tree {
                app: app.code.clone(),
                source,
            })?;
            for (_, node) in tree.walk() {
                if let Some(a) = &node.anchor {
                    if anchors.insert(a.clone(), app.code.clone()).is_some() {
                        return Err(TaskLoadError::DuplicateAnchor(a.clone()));
                    }
                }
            }
            apps.push((app.code, tree));
        }
        let focused_app = doc.focused_app.unwrap_or_else(|| apps[0].0.clone());
        let check_app = |context: &str, app: &str| {
            if codes.contains(app) {
                Ok(())
            } else {
                Err(TaskLoadError::UnknownApp {
                    context: context.to_string(),
                    app: app.to_string(),
                })
            }
        };
        let check_anchor = |context: &str, anchor: &str| {
            if anchors.contains_key(anchor) {
                Ok(())
            } else {
                Err(TaskLoadError::UnknownAnchor {
                    context: context.to_string(),
                    anchor: anchor.to_string(),
                })
            }
        };
        check_app("focused_app", &focused_app)?;
        for (i, t) in doc.transitions.iter().enumerate() {
            let ctx = format!("transition {i}");
            for a in [&t.target, &t.source].into_iter().flatten() {
                check_anchor(&ctx, a)?;
            }
            match t.on {
                Trigger::Key if t.key.is_none() => {
                    return Err(TaskLoadError::Invalid(format!(
                        "{ctx}: key trigger needs `key`"
                    )))
                }
                Trigger::Click | Trigger::Type | Trigger::Drop if t.target.is_none() => {
                    return Err(TaskLoadError::Invalid(format!(
                        "{ctx}: trigger needs `target`"
                    )))
                }
                _ => {}
            }
            for e in &t.effects {
                if let Some(n) = e.node() {
                    check_anchor(&ctx, n)?;
                }
                if let Effect::SwitchApp { app } = e {
                    check_app(&ctx, app)?;
                }
            }
        }
        let mut ocr = Vec::new();
        for (i, o) in doc.ocr.into_iter().enumerate() {
            check_app(&format!("ocr block {i}"), &o.app)?;
            let block = OcrBlock::new(o.text, BoundingBox::new(o.x, o.y, o.w, o.h))
                .ok_or_else(|| TaskLoadError::Invalid(format!("ocr block {i} has no text")))?;
            ocr.push((o.app, block));
        }
        for (i, r) in doc.evaluator.iter().enumerate() {
            if let Some(sel) = r.selector() {
                let ctx = format!("evaluator rule {i}");
                if let Some(a) = &sel.app {
                    check_app(&ctx, a)?;
                }
                if let Some(n) = &sel.node {
                    check_anchor(&ctx, n)?;
                }
            }
        }
        Ok(EnvTask {
            id: doc.id,
            instruction: doc.instruction,
            focused_app,
            apps,
            transitions: doc.transitions,
            ocr,
            evaluator: doc.evaluator,
        })
    }

    pub fn has_evaluator(&self) -> bool {
        !self.evaluator.is_empty()
    }

    pub fn app_codes(&self) -> Vec<&str> {
        self.apps.iter().map(|(c, _)| c.as_str()).collect()
    }

    /// Same desktop with a different instruction and no evaluator; used for
    /// exploration tasks.
    pub fn with_instruction(&self, id: impl Into<String>, instruction: impl Into<String>) -> Self {
        EnvTask {
            id: id.into(),
            instruction: instruction.into(),
            evaluator: Vec::new(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = 1
id = "t"
instruction = "do it"

[[apps]]
code = "app"
tree = '''
window "W" 0 0 100 100
  button "Go" 0 0 10 10 #go
  dialog "D" 0 20 50 50 hidden #dlg
'''

[[transitions]]
on = "click"
target = "go"
effects = [{ op = "show", node = "dlg" }]

[[ocr]]
app = "app"
text = "hello"
x = 60
y = 60
w = 10
h = 10

[[evaluator]]
rule = "element-exists"
node = "dlg"
"#;

    #[test]
    fn parses_minimal_task() {
        let t = EnvTask::parse(MINIMAL).unwrap();
        assert_eq!(t.focused_app, "app");
        assert_eq!(t.transitions.len(), 1);
        assert_eq!(t.ocr[0].1.text(), "hello");
        assert!(t.has_evaluator());
        assert_eq!(t.app_codes(), vec!["app"]);
        let explore = t.with_instruction("e1", "something else");
        assert!(!explore.has_evaluator());
        assert_eq!(explore.apps, t.apps);
    }

    #[test]
    fn load_errors() {
        let cases = [
            (MINIMAL.replace("schema = 1", "schema = 9"), "schema"),
            (
                MINIMAL.replace(
                    "rule = \"element-exists\"\nnode = \"dlg\"",
                    "rule = \"element-absent\"\nnode = \"nope\"",
                ),
                "unknown anchor",
            ),
            (MINIMAL.replace("#dlg", "#go"), "more than once"),
            (MINIMAL.replace("  button", "      button"), "skips"),
            (
                MINIMAL.replace("instruction = \"do it\"", "instruction = \" \""),
                "instruction",
            ),
            (
                MINIMAL.replace("app = \"app\"", "app = \"zzz\""),
                "unknown app",
            ),
            ("schema = 1\nid = [".to_string(), "TOML"),
            (
                MINIMAL.replace("on = \"click\"", "on = \"key\""),
                "needs `key`",
            ),
        ];
        for (text, needle) in cases {
            let err = EnvTask::parse(&text).unwrap_err().to_string();
            assert!(err.contains(needle), "expected `{needle}` in `{err}`");
        }
    }
}
