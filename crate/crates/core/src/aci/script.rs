//! Low-level input event scripts and the action compiler.
//!
//! Text form, one event per line:
//!
//! ```text
//! pointer-move 15 25
//! button-press left
//! button-release left
//! key-press ctrl
//! key-release ctrl
//! text-emit "cd /home/user"
//! wheel-scroll -3
//! app-activate "gedit"
//! sleep 1500
//! buffer-store "saved text"
//! ```

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::action::{validate_action, Action, MouseButton, Violation};
use super::tree::{quote, Observation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum InputEvent {
    PointerMove { x: i32, y: i32 },
    ButtonPress { button: MouseButton },
    ButtonRelease { button: MouseButton },
    KeyPress { key: String },
    KeyRelease { key: String },
    TextEmit { text: String },
    WheelScroll { clicks: i32 },
    AppActivate { code: String },
    Sleep { ms: u64 },
    BufferStore { text: String },
}

impl fmt::Display for InputEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputEvent::PointerMove { x, y } => write!(f, "pointer-move {x} {y}"),
            InputEvent::ButtonPress { button } => write!(f, "button-press {button}"),
            InputEvent::ButtonRelease { button } => write!(f, "button-release {button}"),
            InputEvent::KeyPress { key } => write!(f, "key-press {key}"),
            InputEvent::KeyRelease { key } => write!(f, "key-release {key}"),
            InputEvent::TextEmit { text } => write!(f, "text-emit {}", quote(text)),
            InputEvent::WheelScroll { clicks } => write!(f, "wheel-scroll {clicks}"),
            InputEvent::AppActivate { code } => write!(f, "app-activate {}", quote(code)),
            InputEvent::Sleep { ms } => write!(f, "sleep {ms}"),
            InputEvent::BufferStore { text } => write!(f, "buffer-store {}", quote(text)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event line {line}: {message}")]
pub struct ScriptParseError {
    pub line: usize,
    pub message: String,
}

impl InputEvent {
    fn parse(line: &str, lineno: usize) -> Result<Self, ScriptParseError> {
        let err = |message: String| ScriptParseError {
            line: lineno,
            message,
        };
        let (verb, rest) = line.split_once(' ').unwrap_or((line, ""));
        let int = |s: &str| -> Result<i64, ScriptParseError> {
            s.trim()
                .parse()
                .map_err(|_| err(format!("`{s}` is not an integer")))
        };
        let text = |s: &str| -> Result<String, ScriptParseError> {
            serde_json::from_str(s.trim()).map_err(|e| err(format!("bad string: {e}")))
        };
        let button = |s: &str| s.trim().parse::<MouseButton>().map_err(err);
        let key = |s: &str| {
            let k = s.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                Err(err(format!("bad key `{s}`")))
            } else {
                Ok(k.to_string())
            }
        };
        Ok(match verb {
            "pointer-move" => {
                let (x, y) = rest
                    .trim()
                    .split_once(' ')
                    .ok_or_else(|| err("pointer-move needs x and y".into()))?;
                InputEvent::PointerMove {
                    x: int(x)? as i32,
                    y: int(y)? as i32,
                }
            }
            "button-press" => InputEvent::ButtonPress {
                button: button(rest)?,
            },
            "button-release" => InputEvent::ButtonRelease {
                button: button(rest)?,
            },
            "key-press" => InputEvent::KeyPress { key: key(rest)? },
            "key-release" => InputEvent::KeyRelease { key: key(rest)? },
            "text-emit" => InputEvent::TextEmit { text: text(rest)? },
            "wheel-scroll" => InputEvent::WheelScroll {
                clicks: int(rest)? as i32,
            },
            "app-activate" => InputEvent::AppActivate { code: text(rest)? },
            "sleep" => InputEvent::Sleep {
                ms: u64::try_from(int(rest)?).map_err(|_| err("negative sleep".into()))?,
            },
            "buffer-store" => InputEvent::BufferStore { text: text(rest)? },
            other => return Err(err(format!("unknown event `{other}`"))),
        })
    }
}

/// An ordered list of input events produced from exactly one action.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventScript {
    pub events: Vec<InputEvent>,
}

impl EventScript {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, ScriptParseError> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| InputEvent::parse(l.trim(), i + 1))
            .collect::<Result<_, _>>()?;
        Ok(EventScript { events })
    }

    /// Every press is matched by a later release of the same key or button,
    /// and nothing is released that is not held.
    pub fn is_balanced(&self) -> bool {
        let mut held: HashMap<String, i64> = HashMap::new();
        for e in &self.events {
            let (id, delta) = match e {
                InputEvent::ButtonPress { button } => (format!("button:{button}"), 1),
                InputEvent::ButtonRelease { button } => (format!("button:{button}"), -1),
                InputEvent::KeyPress { key } => (format!("key:{key}"), 1),
                InputEvent::KeyRelease { key } => (format!("key:{key}"), -1),
                _ => continue,
            };
            let count = held.entry(id).or_default();
            *count += delta;
            if *count < 0 {
                return false;
            }
        }
        held.values().all(|&c| c == 0)
    }
}

impl fmt::Display for EventScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CompileError {
    #[error("action is not valid for this observation: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

pub(crate) fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase()
}

struct Builder {
    events: Vec<InputEvent>,
}

impl Builder {
    fn push(&mut self, e: InputEvent) {
        self.events.push(e);
    }

    fn move_to(&mut self, (x, y): (i32, i32)) {
        self.push(InputEvent::PointerMove { x, y });
    }

    fn press_keys(&mut self, keys: &[String]) {
        for k in keys {
            self.push(InputEvent::KeyPress {
                key: normalize_key(k),
            });
        }
    }

    fn release_keys_reversed(&mut self, keys: &[String]) {
        for k in keys.iter().rev() {
            self.push(InputEvent::KeyRelease {
                key: normalize_key(k),
            });
        }
    }

    fn tap_key(&mut self, key: &str) {
        self.push(InputEvent::KeyPress { key: key.into() });
        self.push(InputEvent::KeyRelease { key: key.into() });
    }

    fn click(&mut self, button: MouseButton) {
        self.push(InputEvent::ButtonPress { button });
        self.push(InputEvent::ButtonRelease { button });
    }
}

/// Compiles one validated action into its input events. Elements are
/// targeted at their bounding-box center.
pub fn compile_action(action: &Action, obs: &Observation) -> Result<EventScript, CompileError> {
    let violations = validate_action(action, obs);
    if !violations.is_empty() {
        return Err(CompileError::Invalid(violations));
    }
    let center = |tag: u32| {
        obs.element(tag)
            .expect("validated element ids are present")
            .bbox
            .center()
    };
    let mut b = Builder { events: Vec::new() };
    match action {
        Action::Click {
            element_id,
            num_clicks,
            button_type,
            hold_keys,
        } => {
            b.move_to(center(*element_id));
            b.press_keys(hold_keys);
            for _ in 0..*num_clicks {
                b.click(*button_type);
            }
            b.release_keys_reversed(hold_keys);
        }
        Action::Type {
            text,
            element_id,
            overwrite,
            enter,
        } => {
            if let Some(id) = element_id {
                b.move_to(center(*id));
                b.click(MouseButton::Left);
            }
            if *overwrite {
                b.push(InputEvent::KeyPress { key: "ctrl".into() });
                b.tap_key("a");
                b.push(InputEvent::KeyRelease { key: "ctrl".into() });
                b.tap_key("backspace");
            }
            if !text.is_empty() {
                b.push(InputEvent::TextEmit { text: text.clone() });
            }
            if *enter {
                b.tap_key("enter");
            }
        }
        Action::Scroll { element_id, clicks } => {
            if let Some(id) = element_id {
                b.move_to(center(*id));
            }
            b.push(InputEvent::WheelScroll { clicks: *clicks });
        }
        Action::Hotkey { keys } => {
            b.press_keys(keys);
            b.release_keys_reversed(keys);
        }
        Action::HoldAndPress {
            hold_keys,
            press_keys,
        } => {
            b.press_keys(hold_keys);
            for k in press_keys {
                b.tap_key(&normalize_key(k));
            }
            b.release_keys_reversed(hold_keys);
        }
        Action::DragAndDrop {
            drag_from_id,
            drop_on_id,
            hold_keys,
        } => {
            b.move_to(center(*drag_from_id));
            b.press_keys(hold_keys);
            b.push(InputEvent::ButtonPress {
                button: MouseButton::Left,
            });
            b.move_to(center(*drop_on_id));
            b.push(InputEvent::ButtonRelease {
                button: MouseButton::Left,
            });
            b.release_keys_reversed(hold_keys);
        }
        Action::SaveToBuffer { text } => b.push(InputEvent::BufferStore { text: text.clone() }),
        Action::SwitchApplications { app_code } => b.push(InputEvent::AppActivate {
            code: app_code.trim().to_string(),
        }),
        Action::Wait { time } => b.push(InputEvent::Sleep {
            ms: (time * 1000.0).round() as u64,
        }),
        Action::Done | Action::Fail => {}
    }
    Ok(EventScript { events: b.events })
}
