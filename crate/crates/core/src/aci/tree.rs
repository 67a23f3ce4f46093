//! Accessibility trees: parsing, tagging, OCR augmentation and linearization.
//!
//! The text serialization has one node per line:
//!
//! ```text
//! # comments and blank lines are ignored
//! window "Mozilla Thunderbird" 0 0 1280 800 #main
//!   button "Get Messages" 10 40 90 24 focused
//!   text-field "Search" 400 40 200 24 value="inbox"
//! ```
//!
//! Depth is two spaces per level. After the role come the quoted name
//! (JSON string escapes), `x y w h`, then any number of state flags, an
//! optional `value="..."` and an optional `#anchor` that simulators use to
//! address nodes. Anchors never reach the tagged tree.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{compute_iou, BoundingBox};

pub const OCR_ROLE: &str = "ocr-text";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementSource {
    Tree,
    Ocr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiElement {
    pub tag: u32,
    pub role: String,
    pub name: String,
    pub bbox: BoundingBox,
    pub states: BTreeSet<String>,
    /// Current text content for editable elements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub source: ElementSource,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("duplicate tag {0}")]
    DuplicateTag(u32),
    #[error("parent reference {parent} of tag {child} does not name an element")]
    DanglingParent { child: u32, parent: u32 },
}

/// An untagged tree as delivered by an accessibility feed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawNode {
    pub role: String,
    pub name: String,
    pub bbox: BoundingBox,
    #[serde(default)]
    pub states: BTreeSet<String>,
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub anchor: Option<String>,
    #[serde(default)]
    pub children: Vec<RawNode>,
}

impl RawNode {
    pub fn new(role: impl Into<String>, name: impl Into<String>, bbox: BoundingBox) -> Self {
        RawNode {
            role: role.into(),
            name: name.into(),
            bbox,
            ..RawNode::default()
        }
    }

    pub fn with_state(mut self, state: impl Into<String>) -> Self {
        self.states.insert(state.into());
        self
    }

    pub fn with_value(mut self, value: impl Into<String>) -> Self {
        self.value = Some(value.into());
        self
    }

    pub fn with_anchor(mut self, anchor: impl Into<String>) -> Self {
        self.anchor = Some(anchor.into());
        self
    }

    pub fn with_child(mut self, child: RawNode) -> Self {
        self.children.push(child);
        self
    }

    /// Pre-order traversal yielding `(depth, node)`.
    pub fn walk(&self) -> Vec<(usize, &RawNode)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, self)];
        while let Some((depth, node)) = stack.pop() {
            out.push((depth, node));
            for child in node.children.iter().rev() {
                stack.push((depth + 1, child));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawTree {
    pub roots: Vec<RawNode>,
}

impl RawTree {
    pub fn new(roots: Vec<RawNode>) -> Self {
        RawTree { roots }
    }

    pub fn parse(text: &str) -> Result<RawTree, ParseError> {
        parse_tree(text)
    }

    pub fn walk(&self) -> Vec<(usize, &RawNode)> {
        self.roots.iter().flat_map(RawNode::walk).collect()
    }

    /// Serializes back into the line format accepted by [`parse_tree`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (depth, node) in self.walk() {
            for _ in 0..depth {
                out.push_str("  ");
            }
            let _ = write!(
                out,
                "{} {} {} {} {} {}",
                node.role,
                quote(&node.name),
                node.bbox.x,
                node.bbox.y,
                node.bbox.w,
                node.bbox.h
            );
            for s in &node.states {
                let _ = write!(out, " {s}");
            }
            if let Some(v) = &node.value {
                let _ = write!(out, " value={}", quote(v));
            }
            if let Some(a) = &node.anchor {
                let _ = write!(out, " #{a}");
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn is_word(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | ':'))
}

#[derive(Debug)]
enum Token {
    Bare(String),
    Quoted(String),
    Keyed(String, String),
}

/// Splits one line into bare words and JSON-quoted strings.
fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>, ParseError> {
    let bytes = line.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'"' {
            i += 1;
        }
        let word = &line[start..i];
        if i < bytes.len() && bytes[i] == b'"' {
            let (text, end) = scan_quoted(line, i, lineno)?;
            i = end;
            if word.is_empty() {
                tokens.push(Token::Quoted(text));
            } else if let Some(key) = word.strip_suffix('=') {
                tokens.push(Token::Keyed(key.to_string(), text));
            } else {
                return Err(syntax(lineno, format!("unexpected quote after `{word}`")));
            }
        } else {
            tokens.push(Token::Bare(word.to_string()));
        }
    }
    Ok(tokens)
}

fn scan_quoted(line: &str, open: usize, lineno: usize) -> Result<(String, usize), ParseError> {
    let bytes = line.as_bytes();
    let mut j = open + 1;
    while j < bytes.len() {
        match bytes[j] {
            b'\\' => j += 2,
            b'"' => {
                let raw = &line[open..=j];
                let text: String = serde_json::from_str(raw)
                    .map_err(|e| syntax(lineno, format!("bad string literal: {e}")))?;
                return Ok((text, j + 1));
            }
            _ => j += 1,
        }
    }
    Err(syntax(lineno, "unterminated string"))
}

fn parse_line(body: &str, lineno: usize) -> Result<RawNode, ParseError> {
    let mut tokens = tokenize(body, lineno)?.into_iter();
    let role = match tokens.next() {
        Some(Token::Bare(r)) if is_word(&r) => r,
        _ => return Err(syntax(lineno, "expected a role")),
    };
    let name = match tokens.next() {
        Some(Token::Quoted(n)) => n,
        _ => return Err(syntax(lineno, "expected a quoted name after the role")),
    };
    let mut nums = [0i64; 4];
    for (k, slot) in nums.iter_mut().enumerate() {
        *slot = match tokens.next() {
            Some(Token::Bare(n)) => n
                .parse()
                .map_err(|_| syntax(lineno, format!("coordinate {k} is not an integer: `{n}`")))?,
            _ => return Err(syntax(lineno, "expected x y w h")),
        };
    }
    let x = i32::try_from(nums[0]).map_err(|_| syntax(lineno, "x out of range"))?;
    let y = i32::try_from(nums[1]).map_err(|_| syntax(lineno, "y out of range"))?;
    let w = u32::try_from(nums[2]).map_err(|_| syntax(lineno, "width must be >= 0"))?;
    let h = u32::try_from(nums[3]).map_err(|_| syntax(lineno, "height must be >= 0"))?;
    let mut node = RawNode::new(role, name, BoundingBox::new(x, y, w, h));
    for tok in tokens {
        match tok {
            Token::Bare(a) if a.starts_with('#') => {
                let anchor = &a[1..];
                if !is_word(anchor) {
                    return Err(syntax(lineno, format!("bad anchor `{a}`")));
                }
                if node.anchor.replace(anchor.to_string()).is_some() {
                    return Err(syntax(lineno, "more than one anchor"));
                }
            }
            Token::Bare(flag) if is_word(&flag) => {
                node.states.insert(flag);
            }
            Token::Keyed(key, v) if key == "value" => {
                if node.value.replace(v).is_some() {
                    return Err(syntax(lineno, "more than one value"));
                }
            }
            other => return Err(syntax(lineno, format!("unexpected token {other:?}"))),
        }
    }
    Ok(node)
}

/// Parses the indented line format into an untagged tree.
pub fn parse_tree(text: &str) -> Result<RawTree, ParseError> {
    // Stack of (depth, path of child indices from the roots).
    let mut roots: Vec<RawNode> = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim_start_matches(' ');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed.starts_with('\t') {
            return Err(syntax(lineno, "tabs are not allowed in indentation"));
        }
        let indent = line.len() - trimmed.len();
        if indent % 2 != 0 {
            return Err(syntax(
                lineno,
                "indentation must be a multiple of two spaces",
            ));
        }
        let depth = indent / 2;
        if depth > path.len() {
            return Err(syntax(lineno, "indentation skips a level"));
        }
        let node = parse_line(trimmed, lineno)?;
        path.truncate(depth);
        let siblings = if depth == 0 {
            &mut roots
        } else {
            let mut cur = &mut roots[path[0]];
            for &i in &path[1..] {
                cur = &mut cur.children[i];
            }
            &mut cur.children
        };
        siblings.push(node);
        path.push(siblings.len() - 1);
    }
    Ok(RawTree { roots })
}

/// A tagged tree. Nodes are in pre-order; OCR-derived nodes follow the tree
/// nodes and have no parent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessibilityTree {
    nodes: Vec<UiElement>,
    parent: BTreeMap<u32, u32>,
}

impl AccessibilityTree {
    pub fn new(nodes: Vec<UiElement>, parent: BTreeMap<u32, u32>) -> Result<Self, TreeError> {
        let mut seen = HashSet::new();
        for n in &nodes {
            if !seen.insert(n.tag) {
                return Err(TreeError::DuplicateTag(n.tag));
            }
        }
        for (&child, &p) in &parent {
            if !seen.contains(&child) || !seen.contains(&p) {
                return Err(TreeError::DanglingParent { child, parent: p });
            }
        }
        Ok(AccessibilityTree { nodes, parent })
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(tag_tree(&parse_tree(text)?))
    }

    pub fn nodes(&self) -> &[UiElement] {
        &self.nodes
    }

    pub fn parent_of(&self, tag: u32) -> Option<u32> {
        self.parent.get(&tag).copied()
    }

    pub fn parents(&self) -> &BTreeMap<u32, u32> {
        &self.parent
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, tag: u32) -> Option<&UiElement> {
        match self.nodes.get(tag as usize) {
            Some(n) if n.tag == tag => Some(n),
            _ => self.nodes.iter().find(|n| n.tag == tag),
        }
    }

    pub fn contains_tag(&self, tag: u32) -> bool {
        self.get(tag).is_some()
    }

    pub fn tags(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.iter().map(|n| n.tag)
    }

    fn next_tag(&self) -> u32 {
        self.nodes.iter().map(|n| n.tag + 1).max().unwrap_or(0)
    }
}

/// Assigns tags `0..n` in pre-order.
pub fn tag_tree(raw: &RawTree) -> AccessibilityTree {
    let mut nodes = Vec::new();
    let mut parent = BTreeMap::new();
    let mut stack: Vec<(Option<u32>, &RawNode)> =
        raw.roots.iter().rev().map(|r| (None, r)).collect();
    while let Some((p, node)) = stack.pop() {
        let tag = nodes.len() as u32;
        if let Some(p) = p {
            parent.insert(tag, p);
        }
        nodes.push(UiElement {
            tag,
            role: node.role.clone(),
            name: node.name.clone(),
            bbox: node.bbox,
            states: node.states.clone(),
            value: node.value.clone(),
            source: ElementSource::Tree,
        });
        for child in node.children.iter().rev() {
            stack.push((Some(tag), child));
        }
    }
    AccessibilityTree { nodes, parent }
}

/// A text block recognized on the screenshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrBlock {
    text: String,
    pub bbox: BoundingBox,
}

impl OcrBlock {
    /// `None` when the text is blank.
    pub fn new(text: impl Into<String>, bbox: BoundingBox) -> Option<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return None;
        }
        Some(OcrBlock {
            text: trimmed.to_string(),
            bbox,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Highest IOU between `bbox` and any element of `tree`; 0 for an empty tree.
pub fn max_iou(tree: &AccessibilityTree, bbox: &BoundingBox) -> f64 {
    tree.nodes
        .iter()
        .map(|n| compute_iou(&n.bbox, bbox))
        .fold(0.0, f64::max)
}

/// Appends every OCR block that does not already exist in the tree.
///
/// A block exists when its IOU with some element of the input tree exceeds
/// `iou_threshold`. Blocks are only compared against the input tree, not
/// against each other.
pub fn augment_with_ocr(
    tree: &AccessibilityTree,
    blocks: &[OcrBlock],
    iou_threshold: f64,
) -> AccessibilityTree {
    let mut out = tree.clone();
    let mut next = tree.next_tag();
    for block in blocks {
        if max_iou(tree, &block.bbox) > iou_threshold {
            continue;
        }
        out.nodes.push(UiElement {
            tag: next,
            role: OCR_ROLE.to_string(),
            name: block.text.clone(),
            bbox: block.bbox,
            states: BTreeSet::new(),
            value: None,
            source: ElementSource::Ocr,
        });
        next += 1;
    }
    out
}

/// Renders one line per element: `[tag] role "name" (x,y,w,h) states`.
pub fn linearize(tree: &AccessibilityTree) -> String {
    let mut out = String::new();
    for n in &tree.nodes {
        let _ = write!(
            out,
            "[{}] {} {} ({},{},{},{})",
            n.tag,
            n.role,
            quote(&n.name),
            n.bbox.x,
            n.bbox.y,
            n.bbox.w,
            n.bbox.h
        );
        for s in &n.states {
            let _ = write!(out, " {s}");
        }
        if let Some(v) = &n.value {
            let _ = write!(out, " value={}", quote(v));
        }
        out.push('\n');
    }
    out
}

/// What the agent perceives at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tree: AccessibilityTree,
    /// Path or data URI of the screenshot, when the environment has one.
    #[serde(default)]
    pub screenshot: Option<String>,
    pub linearized: String,
}

impl Observation {
    pub fn new(tree: AccessibilityTree, screenshot: Option<String>) -> Self {
        let linearized = linearize(&tree);
        Observation {
            tree,
            screenshot,
            linearized,
        }
    }

    pub fn element(&self, tag: u32) -> Option<&UiElement> {
        self.tree.get(tag)
    }

    pub fn digest(&self) -> String {
        crate::fingerprint::digest(&self.linearized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
# sample
window "Main" 0 0 100 100 #w
  button "OK" 10 10 20 10 focused
  text-field "Name \"first\"" 40 10 50 10 value="Ann Lee" #name
panel "" 0 100 100 20
"#;

    #[test]
    fn parses_and_tags_in_preorder() {
        let raw = parse_tree(SAMPLE).unwrap();
        assert_eq!(raw.roots.len(), 2);
        let tree = tag_tree(&raw);
        let roles: Vec<_> = tree
            .nodes()
            .iter()
            .map(|n| (n.tag, n.role.as_str()))
            .collect();
        assert_eq!(
            roles,
            vec![
                (0, "window"),
                (1, "button"),
                (2, "text-field"),
                (3, "panel")
            ]
        );
        assert_eq!(tree.parent_of(1), Some(0));
        assert_eq!(tree.parent_of(2), Some(0));
        assert_eq!(tree.parent_of(0), None);
        assert_eq!(tree.parent_of(3), None);
        let field = tree.get(2).unwrap();
        assert_eq!(field.name, "Name \"first\"");
        assert_eq!(field.value.as_deref(), Some("Ann Lee"));
        assert!(tree.get(1).unwrap().states.contains("focused"));
        assert_eq!(raw.roots[0].children[1].anchor.as_deref(), Some("name"));
    }

    #[test]
    fn three_node_tree_tags() {
        let t = AccessibilityTree::parse("a \"\" 0 0 1 1\n  b \"\" 0 0 1 1\n  c \"\" 0 0 1 1\n")
            .unwrap();
        assert_eq!(t.tags().collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_tree() {
        let t = AccessibilityTree::parse("").unwrap();
        assert!(t.is_empty());
        assert_eq!(linearize(&t), "");
    }

    #[test]
    fn tagging_is_deterministic() {
        let raw = parse_tree(SAMPLE).unwrap();
        assert_eq!(tag_tree(&raw), tag_tree(&raw));
    }

    #[test]
    fn malformed_inputs() {
        for (text, needle) in [
            ("button OK 0 0 1 1", "quoted name"),
            ("button \"OK\" 0 0 -1 1", "width"),
            ("button \"OK\" 0 0 1", "x y w h"),
            ("a \"\" 0 0 1 1\n    b \"\" 0 0 1 1", "skips"),
            (" a \"\" 0 0 1 1", "multiple of two"),
            ("a \"unterminated 0 0 1 1", "unterminated"),
            ("a \"\" 0 0 1 1 #x #y", "anchor"),
            ("\ta \"\" 0 0 1 1", "tabs"),
        ] {
            let err = parse_tree(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} -> {err}");
        }
    }

    #[test]
    fn tree_constructor_validates() {
        let el = |tag| UiElement {
            tag,
            role: "x".into(),
            name: String::new(),
            bbox: BoundingBox::default(),
            states: BTreeSet::new(),
            value: None,
            source: ElementSource::Tree,
        };
        assert_eq!(
            AccessibilityTree::new(vec![el(0), el(0)], BTreeMap::new()),
            Err(TreeError::DuplicateTag(0))
        );
        assert_eq!(
            AccessibilityTree::new(vec![el(0)], BTreeMap::from([(0, 5)])),
            Err(TreeError::DanglingParent {
                child: 0,
                parent: 5
            })
        );
        assert!(AccessibilityTree::new(vec![el(3), el(7)], BTreeMap::from([(7, 3)])).is_ok());
    }

    #[test]
    fn linearize_single_element() {
        let t = AccessibilityTree::parse("button \"OK\" 1 2 3 4").unwrap();
        let text = linearize(&t);
        assert_eq!(text, "[0] button \"OK\" (1,2,3,4)\n");
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn ocr_exact_overlap_is_skipped_and_disjoint_is_appended() {
        let t = AccessibilityTree::parse("a \"\" 0 0 10 10\n  b \"\" 0 0 5 5").unwrap();
        let same = OcrBlock::new("dup", BoundingBox::new(0, 0, 10, 10)).unwrap();
        let far = OcrBlock::new("far", BoundingBox::new(50, 50, 4, 4)).unwrap();
        let out = augment_with_ocr(&t, &[same, far], 0.5);
        assert_eq!(out.len(), 3);
        let added = out.get(2).unwrap();
        assert_eq!(added.role, OCR_ROLE);
        assert_eq!(added.name, "far");
        assert_eq!(added.source, ElementSource::Ocr);
        assert_eq!(out.parent_of(2), None);
        assert_eq!(&out.nodes()[..2], t.nodes());
    }

    #[test]
    fn ocr_into_empty_tree() {
        let block = OcrBlock::new("  hi ", BoundingBox::new(0, 0, 1, 1)).unwrap();
        assert_eq!(block.text(), "hi");
        let out = augment_with_ocr(&AccessibilityTree::default(), &[block], 0.5);
        assert_eq!(out.get(0).unwrap().name, "hi");
        assert!(OcrBlock::new(" \n", BoundingBox::default()).is_none());
    }

    fn arb_node(depth: u32) -> BoxedStrategy<RawNode> {
        let leaf = (
            "[a-z][a-z-]{0,8}",
            ".{0,12}",
            (-50i32..500, -50i32..500, 0u32..300, 0u32..300),
            proptest::collection::btree_set("[a-z]{1,6}", 0..3),
            proptest::option::of(".{0,8}"),
            proptest::option::of("[a-z_]{1,6}"),
        )
            .prop_map(
                |(role, name, (x, y, w, h), states, value, anchor)| RawNode {
                    role,
                    name,
                    bbox: BoundingBox::new(x, y, w, h),
                    states,
                    value,
                    anchor,
                    children: vec![],
                },
            );
        if depth == 0 {
            return leaf.boxed();
        }
        (leaf, proptest::collection::vec(arb_node(depth - 1), 0..3))
            .prop_map(|(mut n, children)| {
                n.children = children;
                n
            })
            .boxed()
    }

    proptest! {
        #[test]
        fn text_format_round_trips(roots in proptest::collection::vec(arb_node(3), 0..4)) {
            let tree = RawTree::new(roots);
            let back = parse_tree(&tree.to_text()).unwrap();
            prop_assert_eq!(back, tree);
        }

        #[test]
        fn linearized_mentions_every_tag_once(roots in proptest::collection::vec(arb_node(2), 0..4)) {
            let tree = tag_tree(&RawTree::new(roots));
            let text = linearize(&tree);
            prop_assert_eq!(text.lines().count(), tree.len());
            for tag in tree.tags() {
                let prefix = format!("[{tag}] ");
                let n = text.lines().filter(|l| l.starts_with(&prefix)).count();
                prop_assert_eq!(n, 1);
            }
        }
    }
}
