//! Agent-computer interface.
//!
//! Perception: accessibility trees are tagged with integers in pre-order,
//! augmented with OCR text blocks that do not overlap an existing element,
//! and rendered one line per element for prompting.
//!
//! Action: the model grounds exactly one primitive per step against those
//! tags. [`validate_action`] checks it against the observation it was made
//! for and [`compile_action`] lowers it into an [`EventScript`] of
//! pointer, button and key events.

mod action;
mod geometry;
mod literal;
mod script;
mod tree;

pub use action::{is_known_key, validate_action, Action, ActionKind, MouseButton, Violation};
pub use geometry::{compute_iou, BoundingBox};
pub use literal::{parse_action_literal, LiteralError};
pub use script::{compile_action, CompileError, EventScript, InputEvent, ScriptParseError};
pub use tree::{
    augment_with_ocr, linearize, max_iou, parse_tree, tag_tree, AccessibilityTree, ElementSource,
    Observation, OcrBlock, ParseError, RawNode, RawTree, TreeError, UiElement, OCR_ROLE,
};

/// Default IOU above which an OCR block counts as already present.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

pub(crate) use script::join_violations;
