//! End-to-end corrupt, instruct and refine loop on one segment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::centerline::Centerline;
use crate::corruption::{annotate_record, apply_error, sample_error, CorruptionConfig, CorruptionError, EditRecord, ErrorKind};
use crate::instruction::{invert_record, render_instruction, EditCommand, RenderError, Vocabulary};
use crate::metrics::dice;
use crate::refine::{RefineError, RefinementSession};
use crate::volume::{LabelVolume, VolumeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

/// Outcome of one round trip on one segment.
#[derive(Clone, Debug, Serialize)]
pub struct RoundTrip {
    pub record: EditRecord,
    pub instruction: String,
    /// Whether the detailed text parsed back to exactly the inverse command.
    pub parse_exact: bool,
    pub commands: Vec<EditCommand>,
    /// Segment Dice against ground truth before and after refinement.
    pub dice_error: f64,
    pub dice_refined: f64,
}

/// Samples an error of `kind` on `segment_id` from `seed`, corrupts `gt`,
/// renders the detailed corrective instruction, parses it and refines.
pub fn round_trip(
    gt: &LabelVolume,
    centerline: &Centerline,
    kind: ErrorKind,
    seed: u64,
    cfg: &CorruptionConfig,
) -> Result<RoundTrip, PipelineError> {
    let cfg = CorruptionConfig {
        kinds: vec![kind],
        ..cfg.clone()
    };
    let class = centerline.segment_id();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let record = sample_error(&mut rng, class, &cfg)?;
    let corrupted = apply_error(gt, centerline, &record, &cfg)?;
    let record = annotate_record(&record, centerline, gt)?;
    let vocab = Vocabulary::from_label_map(gt.label_map());
    let doc = render_instruction(&record, &vocab)?;
    let mut session = RefinementSession::new(format!("{kind}-{seed}"), corrupted.clone(), None)?;
    let step = session.refine_step(&doc.detailed)?;
    let commands = step.commands.clone();
    let parse_exact = commands == [invert_record(&record)];
    let truth = gt.class_mask(class)?;
    Ok(RoundTrip {
        dice_error: dice(&corrupted.class_mask(class)?, &truth)?,
        dice_refined: dice(&session.current().class_mask(class)?, &truth)?,
        record,
        instruction: doc.detailed,
        parse_exact,
        commands,
    })
}
