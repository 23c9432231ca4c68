//! Corrective instructions: rendering error records into text and parsing
//! text back into executable edit commands.
//!
//! The accepted language is documented in `GRAMMAR.md` at the repository
//! root. Rendering is deterministic and every detailed rendering parses back
//! to the exact inverse command of its record.

mod parse;
mod render;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centerline::Anchor;
use crate::corruption::{EditRecord, ErrorKind};
use crate::geometry::Vec3;

pub use parse::{parse_instruction, split_clauses, ClauseResult, ParsedInstruction};
pub use render::{render_command, render_instruction, render_narrative};
pub use vocab::{Vocabulary, ACTION_SYNONYMS};

/// Canonical viewing convention used by narratives. Left and right always
/// refer to the patient's sides.
pub const VIEW: &str = "posterior";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Thicken,
    Thin,
    RestoreSegment,
    Extend,
    Bridge,
    Consolidate,
    Remove,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::Thicken,
        Action::Thin,
        Action::RestoreSegment,
        Action::Extend,
        Action::Bridge,
        Action::Consolidate,
        Action::Remove,
    ];

    /// Canonical verb used by the renderer.
    pub fn verb(self) -> &'static str {
        match self {
            Action::Thicken => "thicken",
            Action::Thin => "thin",
            Action::RestoreSegment => "restore",
            Action::Extend => "extend",
            Action::Bridge => "bridge",
            Action::Consolidate => "consolidate",
            Action::Remove => "remove",
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.verb())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "unit", content = "value")]
pub enum Magnitude {
    Factor(f64),
    Percent(f64),
    Voxels(f64),
    Millimeters(f64),
    RadiusMm(f64),
}

impl Magnitude {
    pub fn value(self) -> f64 {
        match self {
            Magnitude::Factor(x)
            | Magnitude::Percent(x)
            | Magnitude::Voxels(x)
            | Magnitude::Millimeters(x)
            | Magnitude::RadiusMm(x) => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandSpan {
    pub lo: f64,
    pub hi: f64,
    pub anchor: Anchor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandHints {
    /// Two segments the edit should join.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach: Option<[u8; 2]>,
    /// Explicit voxel-space points, in drawing order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec3>,
}

impl CommandHints {
    pub fn is_empty(&self) -> bool {
        self.attach.is_none() && self.points.is_empty()
    }
}

/// One executable corrective action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditCommand {
    pub action: Action,
    pub segment_id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<CommandSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<Magnitude>,
    #[serde(default, skip_serializing_if = "CommandHints::is_empty")]
    pub hints: CommandHints,
}

impl EditCommand {
    pub fn new(action: Action, segment_id: u8) -> Self {
        Self {
            action,
            segment_id,
            span: None,
            magnitude: None,
            hints: CommandHints::default(),
        }
    }

    /// Structural checks that do not need a volume.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(s) = self.span {
            if !(0.0 <= s.lo && s.lo < s.hi && s.hi <= 100.0) {
                return Err(format!("span {}..{} must be ordered within [0, 100]", s.lo, s.hi));
            }
        }
        if let Some(m) = self.magnitude {
            if !(m.value() > 0.0 && m.value().is_finite()) {
                return Err(format!("magnitude {} must be positive", m.value()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Concise,
    Detailed,
}

/// Rendered text for one error record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionDoc {
    pub narrative: String,
    pub concise: String,
    pub detailed: String,
    pub record: EditRecord,
    pub view: String,
}

impl InstructionDoc {
    pub fn text(&self, g: Granularity) -> &str {
        match g {
            Granularity::Concise => &self.concise,
            Granularity::Detailed => &self.detailed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    UnknownAction,
    UnknownSegment,
    MalformedSpan,
    MalformedMagnitude,
    MalformedHints,
    UnexpectedText,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::UnknownAction => "unknown action verb",
            ParseErrorKind::UnknownSegment => "unknown segment name",
            ParseErrorKind::MalformedSpan => "malformed span",
            ParseErrorKind::MalformedMagnitude => "malformed magnitude",
            ParseErrorKind::MalformedHints => "malformed hints",
            ParseErrorKind::UnexpectedText => "unexpected text",
        }
    }
}

/// A clause that did not parse. Offsets are byte offsets into the full
/// instruction text.
#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
#[error("clause {clause}: {} at {start}..{end}: {detail}", kind.as_str())]
pub struct ClauseError {
    pub kind: ParseErrorKind,
    pub clause: usize,
    pub start: usize,
    pub end: usize,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("segment {0} is not in the label map")]
    UnknownSegment(u8),
}

/// The corrective command that undoes `r`. Spans and anchors carry over
/// unchanged; thicken/thin factors are kept and applied in the opposite
/// direction.
pub fn invert_record(r: &EditRecord) -> EditCommand {
    let span = r.span.map(|[lo, hi]| CommandSpan {
        lo,
        hi,
        anchor: r.anchor_or_default(),
    });
    let factor = r.magnitude.map(Magnitude::Factor);
    let points = r.hints.points.clone();
    let (action, span, magnitude, points) = match r.kind {
        ErrorKind::GlobalThicken => (Action::Thin, None, factor, Vec::new()),
        ErrorKind::GlobalThin => (Action::Thicken, None, factor, Vec::new()),
        ErrorKind::LocalThicken => (Action::Thin, span, factor, Vec::new()),
        ErrorKind::LocalThin => (Action::Thicken, span, factor, Vec::new()),
        ErrorKind::MissingSegment => (Action::RestoreSegment, None, r.hints.radius_mm.map(Magnitude::RadiusMm), points),
        ErrorKind::Shorten => (Action::Extend, span, r.magnitude.map(Magnitude::Percent), points),
        ErrorKind::Disconnect => (Action::Bridge, span, None, Vec::new()),
        ErrorKind::Fragment => (Action::Consolidate, span, None, Vec::new()),
    };
    EditCommand {
        action,
        segment_id: r.segment_id,
        span,
        magnitude,
        hints: CommandHints { attach: None, points },
    }
}
