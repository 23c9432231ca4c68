//! Deterministic application of edit commands, and the iterative refinement
//! session built on it.
//!
//! Every operator is a pure function of the current volume and the command:
//! centerlines are re-derived from the current shape of the edited segment,
//! never taken from ground truth. Operators only ever write the target class
//! into its own voxels or into background.

mod ops;
mod session;

use thiserror::Error;

use crate::centerline::CenterlineError;
use crate::volume::VolumeError;

pub use ops::{apply_command, current_centerline, needs_centerline};
pub use session::{replay, CommandFailure, HistoryStep, RefinementSession, Refiner};

fn summarize(clauses: &[crate::instruction::ClauseError], commands: &[CommandFailure]) -> String {
    let parts: Vec<String> = clauses
        .iter()
        .map(ToString::to_string)
        .chain(commands.iter().map(|f| format!("clause {}: {}", f.clause, f.message)))
        .collect();
    if parts.is_empty() {
        "empty instruction".into()
    } else {
        parts.join("; ")
    }
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("segment {0} is not in the label map")]
    UnknownSegment(u8),
    #[error("segment {0} is empty")]
    EmptySegment(u8),
    #[error("no centerline available for segment {0}")]
    MissingCenterline(u8),
    #[error("insufficient parameters: {0}")]
    InsufficientParameters(String),
    #[error("no stumps found: segment {0} is a single component")]
    NoStumps(u8),
    #[error("divergent replay at step {step}: expected {expected}, got {actual}")]
    DivergentReplay {
        step: usize,
        expected: String,
        actual: String,
    },
    #[error("step {step} out of range for a history of {len}")]
    StepOutOfRange { step: usize, len: usize },
    #[error("no clause could be applied: {}", summarize(clause_errors, command_errors))]
    Rejected {
        clause_errors: Vec<crate::instruction::ClauseError>,
        command_errors: Vec<CommandFailure>,
    },
    #[error("volume mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Centerline(#[from] CenterlineError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

pub type Result<T, E = RefineError> = std::result::Result<T, E>;
