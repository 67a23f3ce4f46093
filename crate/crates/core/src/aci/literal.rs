//! Parser for grounded action literals such as `agent.click(86, 1, "left")`.
//!
//! Arguments follow Python call syntax: positional then keyword, with
//! integers, floats, single- or double-quoted strings, `True`/`False`,
//! `None`, lists, and bare identifiers (read as strings, so
//! `agent.click(38, 1, left)` parses). `type` binds positional arguments by
//! value type, which accepts both `agent.type(230, "3")` and
//! `agent.type("text", 181)`.

use std::collections::BTreeMap;

use thiserror::Error;

use super::action::{Action, ActionKind, MouseButton};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LiteralError {
    #[error("no `agent.<action>(...)` call found")]
    NotFound,
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("{action}: {message}")]
    Arguments {
        action: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    None,
    List(Vec<Value>),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Float(_) => "number",
            Value::Str(_) => "string",
            Value::Bool(_) => "boolean",
            Value::None => "None",
            Value::List(_) => "list",
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, LiteralError> {
        Err(LiteralError::Syntax {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.bump();
        }
        (self.pos > start && !self.src[start..].starts_with(|c: char| c.is_ascii_digit()))
            .then(|| self.src[start..self.pos].to_string())
            .or_else(|| {
                self.pos = start;
                None
            })
    }

    fn string(&mut self, quote: char) -> Result<String, LiteralError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated string"),
                Some(c) if c == quote => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('0') => out.push('\0'),
                    Some('b') => out.push('\u{8}'),
                    Some('f') => out.push('\u{c}'),
                    Some(e @ ('u' | 'x')) => {
                        let len = if e == 'u' { 4 } else { 2 };
                        let hex = self.src.get(self.pos..self.pos + len).unwrap_or("");
                        let code = u32::from_str_radix(hex, 16)
                            .ok()
                            .filter(|_| hex.len() == len);
                        match code.and_then(char::from_u32) {
                            Some(c) => {
                                self.pos += len;
                                out.push(c);
                            }
                            None => return self.err(format!("bad \\{e} escape")),
                        }
                    }
                    Some(c) => out.push(c),
                    None => return self.err("unterminated escape"),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<Value, LiteralError> {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.bump();
        }
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E'))
        {
            self.bump();
        }
        let text = &self.src[start..self.pos];
        if let Ok(i) = text.parse::<i64>() {
            return Ok(Value::Int(i));
        }
        match text.parse::<f64>() {
            Ok(f) => Ok(Value::Float(f)),
            Err(_) => {
                self.pos = start;
                self.err(format!("bad number `{text}`"))
            }
        }
    }

    fn value(&mut self) -> Result<Value, LiteralError> {
        self.skip_ws();
        match self.peek() {
            Some(q @ ('"' | '\'')) => {
                self.bump();
                Ok(Value::Str(self.string(q)?))
            }
            Some('[' | '(') => {
                let close = if self.bump() == Some('[') { ']' } else { ')' };
                let mut items = Vec::new();
                loop {
                    if self.eat(close) {
                        return Ok(Value::List(items));
                    }
                    items.push(self.value()?);
                    if !self.eat(',') {
                        if self.eat(close) {
                            return Ok(Value::List(items));
                        }
                        return self.err(format!("expected `,` or `{close}` in list"));
                    }
                }
            }
            Some(c) if c.is_ascii_digit() || matches!(c, '-' | '+' | '.') => self.number(),
            Some(_) => match self.ident() {
                Some(id) => Ok(match id.as_str() {
                    "True" | "true" => Value::Bool(true),
                    "False" | "false" => Value::Bool(false),
                    "None" | "null" => Value::None,
                    _ => Value::Str(id),
                }),
                None => self.err("expected a value"),
            },
            None => self.err("unexpected end of input"),
        }
    }
}

struct Call {
    name: String,
    positional: Vec<Value>,
    keyword: BTreeMap<String, Value>,
}

fn parse_call(src: &str, start: usize) -> Result<Call, LiteralError> {
    let mut lx = Lexer { src, pos: start };
    let name = lx.ident().ok_or(LiteralError::NotFound)?;
    if !lx.eat('(') {
        return lx.err("expected `(`");
    }
    let mut positional = Vec::new();
    let mut keyword = BTreeMap::new();
    if lx.eat(')') {
        return Ok(Call {
            name,
            positional,
            keyword,
        });
    }
    loop {
        let save = lx.pos;
        let kw = lx.ident().filter(|_| lx.eat('='));
        if kw.is_none() {
            lx.pos = save;
        }
        let v = lx.value()?;
        match kw {
            Some(k) => {
                if keyword.insert(k.clone(), v).is_some() {
                    return lx.err(format!("duplicate keyword `{k}`"));
                }
            }
            None if !keyword.is_empty() => {
                return lx.err("positional argument after keyword argument")
            }
            None => positional.push(v),
        }
        if lx.eat(')') {
            break;
        }
        if !lx.eat(',') {
            return lx.err("expected `,` or `)`");
        }
        if lx.eat(')') {
            break;
        }
    }
    Ok(Call {
        name,
        positional,
        keyword,
    })
}

struct Args {
    action: &'static str,
    slots: BTreeMap<&'static str, Value>,
}

impl Args {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, LiteralError> {
        Err(LiteralError::Arguments {
            action: self.action,
            message: message.into(),
        })
    }

    fn bind(
        action: &'static str,
        params: &[&'static str],
        call: Call,
    ) -> Result<Args, LiteralError> {
        let mut slots = BTreeMap::new();
        if call.positional.len() > params.len() {
            return Err(LiteralError::Arguments {
                action,
                message: format!(
                    "takes at most {} positional arguments, got {}",
                    params.len(),
                    call.positional.len()
                ),
            });
        }
        for (p, v) in params.iter().zip(call.positional) {
            slots.insert(*p, v);
        }
        for (k, v) in call.keyword {
            let Some(p) = params.iter().find(|p| **p == k) else {
                return Err(LiteralError::Arguments {
                    action,
                    message: format!("unexpected keyword `{k}`"),
                });
            };
            if slots.insert(*p, v).is_some() {
                return Err(LiteralError::Arguments {
                    action,
                    message: format!("`{k}` given twice"),
                });
            }
        }
        slots.retain(|_, v| *v != Value::None);
        Ok(Args { action, slots })
    }

    fn int(&self, name: &str) -> Result<Option<i64>, LiteralError> {
        match self.slots.get(name) {
            None => Ok(None),
            Some(Value::Int(i)) => Ok(Some(*i)),
            Some(Value::Float(f)) if f.fract() == 0.0 => Ok(Some(*f as i64)),
            Some(Value::Str(s)) if s.trim().parse::<i64>().is_ok() => {
                Ok(Some(s.trim().parse().unwrap()))
            }
            Some(v) => self.err(format!("`{name}` must be an integer, got {}", v.describe())),
        }
    }

    fn tag(&self, name: &str) -> Result<Option<u32>, LiteralError> {
        match self.int(name)? {
            None => Ok(None),
            Some(i) => match u32::try_from(i) {
                Ok(t) => Ok(Some(t)),
                Err(_) => self.err(format!("`{name}` must be a non-negative element id")),
            },
        }
    }

    fn required_tag(&self, name: &str) -> Result<u32, LiteralError> {
        match self.tag(name)? {
            Some(t) => Ok(t),
            None => self.err(format!("missing `{name}`")),
        }
    }

    fn string(&self, name: &str) -> Result<Option<String>, LiteralError> {
        match self.slots.get(name) {
            None => Ok(None),
            Some(Value::Str(s)) => Ok(Some(s.clone())),
            Some(Value::Int(i)) => Ok(Some(i.to_string())),
            Some(v) => self.err(format!("`{name}` must be a string, got {}", v.describe())),
        }
    }

    fn required_string(&self, name: &str) -> Result<String, LiteralError> {
        match self.string(name)? {
            Some(s) => Ok(s),
            None => self.err(format!("missing `{name}`")),
        }
    }

    fn flag(&self, name: &str) -> Result<bool, LiteralError> {
        match self.slots.get(name) {
            None => Ok(false),
            Some(Value::Bool(b)) => Ok(*b),
            Some(Value::Int(i @ (0 | 1))) => Ok(*i == 1),
            Some(v) => self.err(format!("`{name}` must be a boolean, got {}", v.describe())),
        }
    }

    fn keys(&self, name: &str) -> Result<Vec<String>, LiteralError> {
        match self.slots.get(name) {
            None => Ok(vec![]),
            Some(Value::Str(s)) => Ok(vec![s.clone()]),
            Some(Value::List(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Str(s) => Ok(s.clone()),
                    Value::Int(i) => Ok(i.to_string()),
                    other => self.err(format!(
                        "`{name}` must list key names, found {}",
                        other.describe()
                    )),
                })
                .collect(),
            Some(v) => self.err(format!(
                "`{name}` must be a list of keys, got {}",
                v.describe()
            )),
        }
    }
}

fn bind_type(call: Call) -> Result<Args, LiteralError> {
    // Positional values are routed by type: strings to `text`, integers to
    // `element_id`, booleans to `overwrite` then `enter`.
    let mut slots: BTreeMap<&'static str, Value> = BTreeMap::new();
    let mut bools = ["overwrite", "enter"].into_iter();
    let err = |message: String| LiteralError::Arguments {
        action: "type",
        message,
    };
    for v in call.positional {
        let slot = match &v {
            Value::Str(_) => "text",
            Value::Int(_) => "element_id",
            Value::Bool(_) => bools
                .next()
                .ok_or_else(|| err("too many boolean arguments".into()))?,
            Value::None => continue,
            other => return Err(err(format!("unexpected {} argument", other.describe()))),
        };
        if slots.insert(slot, v).is_some() {
            return Err(err(format!("more than one positional `{slot}`")));
        }
    }
    for (k, v) in call.keyword {
        let slot = match k.as_str() {
            "text" => "text",
            "element_id" => "element_id",
            "overwrite" => "overwrite",
            "enter" => "enter",
            other => return Err(err(format!("unexpected keyword `{other}`"))),
        };
        if slots.insert(slot, v).is_some() {
            return Err(err(format!("`{slot}` given twice")));
        }
    }
    slots.retain(|_, v| *v != Value::None);
    Ok(Args {
        action: "type",
        slots,
    })
}

fn build(call: Call) -> Result<Action, LiteralError> {
    let kind = ActionKind::from_name(&call.name)
        .ok_or_else(|| LiteralError::UnknownAction(call.name.clone()))?;
    let name = kind.name();
    Ok(match kind {
        ActionKind::Click => {
            let a = Args::bind(
                name,
                &["element_id", "num_clicks", "button_type", "hold_keys"],
                call,
            )?;
            let num_clicks = match a.int("num_clicks")? {
                None => 1,
                Some(n) => match u32::try_from(n) {
                    Ok(n) => n,
                    Err(_) => return a.err("`num_clicks` must be non-negative"),
                },
            };
            let button_type = match a.string("button_type")? {
                None => MouseButton::Left,
                Some(b) => match b.parse() {
                    Ok(b) => b,
                    Err(e) => return a.err(e),
                },
            };
            Action::Click {
                element_id: a.required_tag("element_id")?,
                num_clicks,
                button_type,
                hold_keys: a.keys("hold_keys")?,
            }
        }
        ActionKind::Type => {
            let a = bind_type(call)?;
            Action::Type {
                text: a.string("text")?.unwrap_or_default(),
                element_id: a.tag("element_id")?,
                overwrite: a.flag("overwrite")?,
                enter: a.flag("enter")?,
            }
        }
        ActionKind::Scroll => {
            let a = Args::bind(name, &["element_id", "clicks"], call)?;
            let clicks = match a.int("clicks")? {
                Some(c) => match i32::try_from(c) {
                    Ok(c) => c,
                    Err(_) => return a.err("`clicks` out of range"),
                },
                None => return a.err("missing `clicks`"),
            };
            Action::Scroll {
                element_id: a.tag("element_id")?,
                clicks,
            }
        }
        ActionKind::Hotkey => {
            // Accept both `hotkey(['ctrl', 'c'])` and `hotkey('ctrl', 'c')`.
            let keys = if call.positional.len() > 1
                && call.positional.iter().all(|v| matches!(v, Value::Str(_)))
            {
                Call {
                    name: call.name,
                    positional: vec![Value::List(call.positional)],
                    keyword: call.keyword,
                }
            } else {
                call
            };
            let a = Args::bind(name, &["keys"], keys)?;
            Action::Hotkey {
                keys: a.keys("keys")?,
            }
        }
        ActionKind::HoldAndPress => {
            let a = Args::bind(name, &["hold_keys", "press_keys"], call)?;
            Action::HoldAndPress {
                hold_keys: a.keys("hold_keys")?,
                press_keys: a.keys("press_keys")?,
            }
        }
        ActionKind::DragAndDrop => {
            let a = Args::bind(name, &["drag_from_id", "drop_on_id", "hold_keys"], call)?;
            Action::DragAndDrop {
                drag_from_id: a.required_tag("drag_from_id")?,
                drop_on_id: a.required_tag("drop_on_id")?,
                hold_keys: a.keys("hold_keys")?,
            }
        }
        ActionKind::SaveToBuffer => {
            let a = Args::bind(name, &["text"], call)?;
            Action::SaveToBuffer {
                text: a.required_string("text")?,
            }
        }
        ActionKind::SwitchApplications => {
            let a = Args::bind(name, &["app_code"], call)?;
            Action::SwitchApplications {
                app_code: a.required_string("app_code")?,
            }
        }
        ActionKind::Wait => {
            let a = Args::bind(name, &["time"], call)?;
            let time = match a.slots.get("time") {
                Some(Value::Int(i)) => *i as f64,
                Some(Value::Float(f)) => *f,
                Some(v) => return a.err(format!("`time` must be a number, got {}", v.describe())),
                None => return a.err("missing `time`"),
            };
            Action::Wait { time }
        }
        // Sentinels ignore any arguments the model attaches.
        ActionKind::Done => Action::Done,
        ActionKind::Fail => Action::Fail,
    })
}

/// Finds the first `agent.<name>(` call in `text` and parses it.
pub fn parse_action_literal(text: &str) -> Result<Action, LiteralError> {
    let mut search = 0;
    while let Some(off) = text[search..].find("agent.") {
        let start = search + off + "agent.".len();
        let preceded_by_ident = text[..search + off]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_');
        if !preceded_by_ident {
            match parse_call(text, start) {
                Err(LiteralError::NotFound) => {}
                other => return other.and_then(build),
            }
        }
        search = start;
    }
    Err(LiteralError::NotFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Action {
        parse_action_literal(s).unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    #[test]
    fn figure_style_clicks() {
        let expected = Action::Click {
            element_id: 86,
            num_clicks: 1,
            button_type: MouseButton::Left,
            hold_keys: vec![],
        };
        assert_eq!(p(r#"agent.click(86, 1, "left")"#), expected);
        assert_eq!(p("```python\nagent.click(86, 1, 'left')\n```"), expected);
        assert_eq!(p("agent.click(86, 1, left)"), expected);
        assert_eq!(p("agent.click(86)"), expected);
        assert_eq!(
            p("agent.click(207, 2, left)"),
            Action::Click {
                element_id: 207,
                num_clicks: 2,
                button_type: MouseButton::Left,
                hold_keys: vec![],
            }
        );
        assert_eq!(
            p("agent.click(element_id=3, button_type='right', hold_keys=['ctrl'])"),
            Action::Click {
                element_id: 3,
                num_clicks: 1,
                button_type: MouseButton::Right,
                hold_keys: vec!["ctrl".into()],
            }
        );
    }

    #[test]
    fn type_binding_variants() {
        assert_eq!(
            p("agent.type(text='cd /home/user', enter=True)"),
            Action::Type {
                text: "cd /home/user".into(),
                element_id: None,
                overwrite: false,
                enter: true
            }
        );
        assert_eq!(
            p("agent.type(230, \"3\", overwrite=True)"),
            Action::Type {
                text: "3".into(),
                element_id: Some(230),
                overwrite: true,
                enter: false
            }
        );
        assert_eq!(
            p("agent.type(\"text\", 181, overwrite=True)"),
            Action::Type {
                text: "text".into(),
                element_id: Some(181),
                overwrite: true,
                enter: false
            }
        );
    }

    #[test]
    fn other_primitives() {
        assert_eq!(
            p("agent.hotkey(['ctrl', 'h'])"),
            Action::Hotkey {
                keys: vec!["ctrl".into(), "h".into()]
            }
        );
        assert_eq!(
            p("agent.hotkey('ctrl', 'h')"),
            Action::Hotkey {
                keys: vec!["ctrl".into(), "h".into()]
            }
        );
        assert_eq!(
            p("agent.drag_and_drop(55, 57)"),
            Action::DragAndDrop {
                drag_from_id: 55,
                drop_on_id: 57,
                hold_keys: vec![]
            }
        );
        assert_eq!(p("agent.wait(1)"), Action::Wait { time: 1.0 });
        assert_eq!(p("agent.wait(0.25)"), Action::Wait { time: 0.25 });
        assert_eq!(
            p("agent.scroll(12, -3)"),
            Action::Scroll {
                element_id: Some(12),
                clicks: -3
            }
        );
        assert_eq!(
            p("agent.scroll(None, 2)"),
            Action::Scroll {
                element_id: None,
                clicks: 2
            }
        );
        assert_eq!(p("agent.done()"), Action::Done);
        assert_eq!(p("agent.done(28, 1, \"left\")"), Action::Done);
        assert_eq!(p("Grounded: agent.fail()"), Action::Fail);
        assert_eq!(
            p("agent.switch_applications('code')"),
            Action::SwitchApplications {
                app_code: "code".into()
            }
        );
        assert_eq!(
            p("agent.save_to_buffer(\"line 1\\nline 2\")"),
            Action::SaveToBuffer {
                text: "line 1\nline 2".into()
            }
        );
        assert_eq!(
            p("agent.hold_and_press(['shift'], ['a', 'b'])"),
            Action::HoldAndPress {
                hold_keys: vec!["shift".into()],
                press_keys: vec!["a".into(), "b".into()]
            }
        );
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_action_literal("click 86"),
            Err(LiteralError::NotFound)
        );
        assert_eq!(
            parse_action_literal("myagent.click(1)"),
            Err(LiteralError::NotFound)
        );
        assert_eq!(
            parse_action_literal("agent.teleport(1)"),
            Err(LiteralError::UnknownAction("teleport".into()))
        );
        for bad in [
            "agent.click()",
            "agent.click(1, 1, 'top')",
            "agent.click(1, element_id=2)",
            "agent.click(x=1)",
            "agent.click(-1)",
            "agent.wait()",
            "agent.scroll(1)",
            "agent.type('a', 'b')",
            "agent.click(1",
            "agent.click(1, 2, 3, 4, 5)",
            "agent.click(element_id=1, 2)",
        ] {
            assert!(parse_action_literal(bad).is_err(), "{bad}");
        }
    }

    fn arb_keys(min: usize) -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-z]{1,5}", min..3)
    }

    fn arb_action() -> impl Strategy<Value = Action> {
        let button = prop_oneof![
            Just(MouseButton::Left),
            Just(MouseButton::Right),
            Just(MouseButton::Middle)
        ];
        prop_oneof![
            (any::<u32>(), 1u32..4, button, arb_keys(0)).prop_map(|(e, n, b, h)| Action::Click {
                element_id: e,
                num_clicks: n,
                button_type: b,
                hold_keys: h
            }),
            (
                ".*",
                proptest::option::of(any::<u32>()),
                any::<bool>(),
                any::<bool>()
            )
                .prop_map(|(text, element_id, overwrite, enter)| Action::Type {
                    text,
                    element_id,
                    overwrite,
                    enter
                }),
            (proptest::option::of(any::<u32>()), any::<i32>())
                .prop_map(|(element_id, clicks)| Action::Scroll { element_id, clicks }),
            arb_keys(1).prop_map(|keys| Action::Hotkey { keys }),
            (arb_keys(1), arb_keys(1)).prop_map(|(hold_keys, press_keys)| Action::HoldAndPress {
                hold_keys,
                press_keys
            }),
            (any::<u32>(), any::<u32>(), arb_keys(0)).prop_map(|(a, b, h)| Action::DragAndDrop {
                drag_from_id: a,
                drop_on_id: b,
                hold_keys: h
            }),
            ".*".prop_map(|text| Action::SaveToBuffer { text }),
            "[a-z]{1,8}".prop_map(|app_code| Action::SwitchApplications { app_code }),
            (1u32..100000).prop_map(|ms| Action::Wait {
                time: f64::from(ms) / 1000.0
            }),
            Just(Action::Done),
            Just(Action::Fail),
        ]
    }

    proptest! {
        #[test]
        fn rendered_literals_parse_back(a in arb_action()) {
            prop_assert_eq!(parse_action_literal(&a.to_literal()).unwrap(), a);
        }
    }
}
