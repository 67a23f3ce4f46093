use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tree::{quote, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MouseButton {
    Left,
    Right,
    Middle,
}

impl MouseButton {
    pub fn as_str(self) -> &'static str {
        match self {
            MouseButton::Left => "left",
            MouseButton::Right => "right",
            MouseButton::Middle => "middle",
        }
    }
}

impl fmt::Display for MouseButton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MouseButton {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(MouseButton::Left),
            "right" => Ok(MouseButton::Right),
            "middle" => Ok(MouseButton::Middle),
            other => Err(format!("unknown button type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Type,
    Scroll,
    Hotkey,
    HoldAndPress,
    DragAndDrop,
    SaveToBuffer,
    SwitchApplications,
    Wait,
    Done,
    Fail,
}

impl ActionKind {
    pub const ALL: [ActionKind; 11] = [
        ActionKind::Click,
        ActionKind::Type,
        ActionKind::Scroll,
        ActionKind::Hotkey,
        ActionKind::HoldAndPress,
        ActionKind::DragAndDrop,
        ActionKind::SaveToBuffer,
        ActionKind::SwitchApplications,
        ActionKind::Wait,
        ActionKind::Done,
        ActionKind::Fail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::Type => "type",
            ActionKind::Scroll => "scroll",
            ActionKind::Hotkey => "hotkey",
            ActionKind::HoldAndPress => "hold_and_press",
            ActionKind::DragAndDrop => "drag_and_drop",
            ActionKind::SaveToBuffer => "save_to_buffer",
            ActionKind::SwitchApplications => "switch_applications",
            ActionKind::Wait => "wait",
            ActionKind::Done => "done",
            ActionKind::Fail => "fail",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// One primitive from the bounded action vocabulary.
///
/// `Type` and `Scroll` without an element act on whatever currently has
/// focus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click {
        element_id: u32,
        num_clicks: u32,
        button_type: MouseButton,
        hold_keys: Vec<String>,
    },
    Type {
        text: String,
        element_id: Option<u32>,
        overwrite: bool,
        enter: bool,
    },
    Scroll {
        element_id: Option<u32>,
        clicks: i32,
    },
    Hotkey {
        keys: Vec<String>,
    },
    HoldAndPress {
        hold_keys: Vec<String>,
        press_keys: Vec<String>,
    },
    DragAndDrop {
        drag_from_id: u32,
        drop_on_id: u32,
        hold_keys: Vec<String>,
    },
    SaveToBuffer {
        text: String,
    },
    SwitchApplications {
        app_code: String,
    },
    Wait {
        time: f64,
    },
    Done,
    Fail,
}

impl Action {
    pub fn click(element_id: u32) -> Self {
        Action::Click {
            element_id,
            num_clicks: 1,
            button_type: MouseButton::Left,
            hold_keys: vec![],
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::Type { .. } => ActionKind::Type,
            Action::Scroll { .. } => ActionKind::Scroll,
            Action::Hotkey { .. } => ActionKind::Hotkey,
            Action::HoldAndPress { .. } => ActionKind::HoldAndPress,
            Action::DragAndDrop { .. } => ActionKind::DragAndDrop,
            Action::SaveToBuffer { .. } => ActionKind::SaveToBuffer,
            Action::SwitchApplications { .. } => ActionKind::SwitchApplications,
            Action::Wait { .. } => ActionKind::Wait,
            Action::Done => ActionKind::Done,
            Action::Fail => ActionKind::Fail,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Action::Done | Action::Fail)
    }

    /// Every element tag the action refers to.
    pub fn element_ids(&self) -> Vec<u32> {
        match self {
            Action::Click { element_id, .. } => vec![*element_id],
            Action::Type { element_id, .. } | Action::Scroll { element_id, .. } => {
                element_id.iter().copied().collect()
            }
            Action::DragAndDrop {
                drag_from_id,
                drop_on_id,
                ..
            } => vec![*drag_from_id, *drop_on_id],
            _ => vec![],
        }
    }

    /// Renders the `agent.<primitive>(...)` call form with keyword arguments.
    pub fn to_literal(&self) -> String {
        fn keys(k: &[String]) -> String {
            let items: Vec<String> = k.iter().map(|s| quote(s)).collect();
            format!("[{}]", items.join(", "))
        }
        fn py_bool(b: bool) -> &'static str {
            if b {
                "True"
            } else {
                "False"
            }
        }
        let args = match self {
            Action::Click {
                element_id,
                num_clicks,
                button_type,
                hold_keys,
            } => {
                let mut s = format!(
                    "{element_id}, {num_clicks}, {}",
                    quote(button_type.as_str())
                );
                if !hold_keys.is_empty() {
                    s.push_str(&format!(", hold_keys={}", keys(hold_keys)));
                }
                s
            }
            Action::Type {
                text,
                element_id,
                overwrite,
                enter,
            } => {
                let mut s = format!("text={}", quote(text));
                if let Some(id) = element_id {
                    s.push_str(&format!(", element_id={id}"));
                }
                s.push_str(&format!(
                    ", overwrite={}, enter={}",
                    py_bool(*overwrite),
                    py_bool(*enter)
                ));
                s
            }
            Action::Scroll { element_id, clicks } => match element_id {
                Some(id) => format!("{id}, {clicks}"),
                None => format!("clicks={clicks}"),
            },
            Action::Hotkey { keys: k } => keys(k),
            Action::HoldAndPress {
                hold_keys,
                press_keys,
            } => format!("{}, {}", keys(hold_keys), keys(press_keys)),
            Action::DragAndDrop {
                drag_from_id,
                drop_on_id,
                hold_keys,
            } => {
                let mut s = format!("{drag_from_id}, {drop_on_id}");
                if !hold_keys.is_empty() {
                    s.push_str(&format!(", hold_keys={}", keys(hold_keys)));
                }
                s
            }
            Action::SaveToBuffer { text } => quote(text),
            Action::SwitchApplications { app_code } => quote(app_code),
            Action::Wait { time } => format!("{time:?}"),
            Action::Done | Action::Fail => String::new(),
        };
        format!("agent.{}({args})", self.kind().name())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

const NAMED_KEYS: &[&str] = &[
    "ctrl",
    "control",
    "shift",
    "alt",
    "option",
    "cmd",
    "command",
    "win",
    "super",
    "meta",
    "enter",
    "return",
    "tab",
    "space",
    "backspace",
    "delete",
    "del",
    "escape",
    "esc",
    "up",
    "down",
    "left",
    "right",
    "home",
    "end",
    "pageup",
    "pagedown",
    "insert",
    "capslock",
    "printscreen",
    "menu",
];

/// Whether `key` names a key the input layer can synthesize: a named key,
/// a function key `f1`..`f24`, or a single character.
pub fn is_known_key(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    if k.chars().count() == 1 {
        return !k.chars().next().unwrap().is_whitespace();
    }
    if NAMED_KEYS.contains(&k.as_str()) {
        return true;
    }
    k.strip_prefix('f')
        .and_then(|n| n.parse::<u8>().ok())
        .is_some_and(|n| (1..=24).contains(&n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    UnknownElement { arg: &'static str, tag: u32 },
    ZeroClicks,
    NonPositiveWait { time: f64 },
    EmptyKeys { arg: &'static str },
    UnknownKey { arg: &'static str, key: String },
    EmptyText { arg: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownElement { arg, tag } => {
                write!(
                    f,
                    "{arg}={tag} does not name an element in the current observation"
                )
            }
            Violation::ZeroClicks => f.write_str("num_clicks must be at least 1"),
            Violation::NonPositiveWait { time } => {
                write!(
                    f,
                    "wait time must be a positive number of seconds, got {time}"
                )
            }
            Violation::EmptyKeys { arg } => write!(f, "{arg} must list at least one key"),
            Violation::UnknownKey { arg, key } => write!(f, "{arg} contains unknown key `{key}`"),
            Violation::EmptyText { arg } => write!(f, "{arg} must not be empty"),
        }
    }
}

/// Checks an action against the observation it was generated for. An empty
/// list means the action is valid.
pub fn validate_action(action: &Action, obs: &Observation) -> Vec<Violation> {
    let mut out = Vec::new();
    let check_tag = |arg: &'static str, tag: u32, out: &mut Vec<Violation>| {
        if !obs.tree.contains_tag(tag) {
            out.push(Violation::UnknownElement { arg, tag });
        }
    };
    let check_keys =
        |arg: &'static str, keys: &[String], required: bool, out: &mut Vec<Violation>| {
            if required && keys.is_empty() {
                out.push(Violation::EmptyKeys { arg });
            }
            for k in keys {
                if !is_known_key(k) {
                    out.push(Violation::UnknownKey {
                        arg,
                        key: k.clone(),
                    });
                }
            }
        };
    match action {
        Action::Click {
            element_id,
            num_clicks,
            hold_keys,
            ..
        } => {
            check_tag("element_id", *element_id, &mut out);
            if *num_clicks == 0 {
                out.push(Violation::ZeroClicks);
            }
            check_keys("hold_keys", hold_keys, false, &mut out);
        }
        Action::Type { element_id, .. } | Action::Scroll { element_id, .. } => {
            if let Some(id) = element_id {
                check_tag("element_id", *id, &mut out);
            }
        }
        Action::Hotkey { keys } => check_keys("keys", keys, true, &mut out),
        Action::HoldAndPress {
            hold_keys,
            press_keys,
        } => {
            check_keys("hold_keys", hold_keys, true, &mut out);
            check_keys("press_keys", press_keys, true, &mut out);
        }
        Action::DragAndDrop {
            drag_from_id,
            drop_on_id,
            hold_keys,
        } => {
            check_tag("drag_from_id", *drag_from_id, &mut out);
            check_tag("drop_on_id", *drop_on_id, &mut out);
            check_keys("hold_keys", hold_keys, false, &mut out);
        }
        Action::SaveToBuffer { .. } => {}
        Action::SwitchApplications { app_code } => {
            if app_code.trim().is_empty() {
                out.push(Violation::EmptyText { arg: "app_code" });
            }
        }
        Action::Wait { time } => {
            if !(time.is_finite() && *time > 0.0) {
                out.push(Violation::NonPositiveWait { time: *time });
            }
        }
        Action::Done | Action::Fail => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aci::tree::AccessibilityTree;

    fn obs_with(n: usize) -> Observation {
        let text: String = (0..n)
            .map(|i| format!("button \"b{i}\" {} 0 10 10\n", i * 10))
            .collect();
        Observation::new(AccessibilityTree::parse(&text).unwrap(), None)
    }

    #[test]
    fn click_on_present_tag_is_valid() {
        let obs = obs_with(42);
        assert!(validate_action(&Action::click(41), &obs).is_empty());
    }

    #[test]
    fn click_on_unknown_tag() {
        let obs = obs_with(3);
        assert_eq!(
            validate_action(&Action::click(999), &obs),
            vec![Violation::UnknownElement {
                arg: "element_id",
                tag: 999
            }]
        );
    }

    #[test]
    fn zero_wait_rejected() {
        let obs = obs_with(1);
        for time in [0.0, -1.0, f64::NAN] {
            let v = validate_action(&Action::Wait { time }, &obs);
            assert!(
                matches!(v[..], [Violation::NonPositiveWait { .. }]),
                "{time}"
            );
        }
        assert!(validate_action(&Action::Wait { time: 0.5 }, &obs).is_empty());
    }

    #[test]
    fn key_lists() {
        let obs = obs_with(1);
        assert_eq!(
            validate_action(&Action::Hotkey { keys: vec![] }, &obs),
            vec![Violation::EmptyKeys { arg: "keys" }]
        );
        let v = validate_action(
            &Action::HoldAndPress {
                hold_keys: vec!["shift".into()],
                press_keys: vec!["bogus".into()],
            },
            &obs,
        );
        assert_eq!(
            v,
            vec![Violation::UnknownKey {
                arg: "press_keys",
                key: "bogus".into()
            }]
        );
        assert!(is_known_key("F12") && is_known_key("a") && is_known_key("/"));
        assert!(!is_known_key("f25") && !is_known_key(" ") && !is_known_key(""));
    }

    #[test]
    fn zero_clicks_and_drag_targets() {
        let obs = obs_with(2);
        let v = validate_action(
            &Action::Click {
                element_id: 1,
                num_clicks: 0,
                button_type: MouseButton::Right,
                hold_keys: vec![],
            },
            &obs,
        );
        assert_eq!(v, vec![Violation::ZeroClicks]);
        let v = validate_action(
            &Action::DragAndDrop {
                drag_from_id: 0,
                drop_on_id: 7,
                hold_keys: vec![],
            },
            &obs,
        );
        assert_eq!(
            v,
            vec![Violation::UnknownElement {
                arg: "drop_on_id",
                tag: 7
            }]
        );
    }

    #[test]
    fn optional_targets_and_sentinels() {
        let obs = obs_with(0);
        for a in [
            Action::Type {
                text: "x".into(),
                element_id: None,
                overwrite: false,
                enter: true,
            },
            Action::Scroll {
                element_id: None,
                clicks: -3,
            },
            Action::SaveToBuffer {
                text: String::new(),
            },
            Action::Done,
            Action::Fail,
        ] {
            assert!(validate_action(&a, &obs).is_empty(), "{a}");
        }
        assert_eq!(
            validate_action(
                &Action::SwitchApplications {
                    app_code: " ".into()
                },
                &obs
            ),
            vec![Violation::EmptyText { arg: "app_code" }]
        );
    }

    #[test]
    fn kinds_round_trip_names() {
        for k in ActionKind::ALL {
            assert_eq!(ActionKind::from_name(k.name()), Some(k));
        }
        assert_eq!(ActionKind::from_name("teleport"), None);
    }
}
