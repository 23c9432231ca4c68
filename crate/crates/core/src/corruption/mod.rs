//! Parameterized segmentation errors: sampling, application and datasets.

mod apply;
mod dataset;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centerline::{Anchor, CenterlineError};
use crate::geometry::Vec3;
use crate::volume::VolumeError;

pub use apply::{annotate_record, apply_error, apply_records};
pub use dataset::{
    assign_drops, derive_seed, load_manifest, partition_instructions, rebuild_error_volume, synthesize_dataset,
    DatasetConfig, DatasetSummary, SampleTuple, SegmentFailure, Subject,
};

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("segment {0} is absent from the volume")]
    EmptySegment(u8),
    #[error("no centerline for segment {0}")]
    MissingCenterline(u8),
    #[error("error could not be realized: {0}")]
    Unrealized(String),
    #[error(transparent)]
    Centerline(#[from] CenterlineError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = CorruptionError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    GlobalThicken,
    GlobalThin,
    LocalThicken,
    LocalThin,
    MissingSegment,
    Shorten,
    Disconnect,
    Fragment,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 8] = [
        ErrorKind::GlobalThicken,
        ErrorKind::GlobalThin,
        ErrorKind::LocalThicken,
        ErrorKind::LocalThin,
        ErrorKind::MissingSegment,
        ErrorKind::Shorten,
        ErrorKind::Disconnect,
        ErrorKind::Fragment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::GlobalThicken => "global_thicken",
            ErrorKind::GlobalThin => "global_thin",
            ErrorKind::LocalThicken => "local_thicken",
            ErrorKind::LocalThin => "local_thin",
            ErrorKind::MissingSegment => "missing_segment",
            ErrorKind::Shorten => "shorten",
            ErrorKind::Disconnect => "disconnect",
            ErrorKind::Fragment => "fragment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn has_span(self) -> bool {
        matches!(
            self,
            ErrorKind::LocalThicken | ErrorKind::LocalThin | ErrorKind::Shorten | ErrorKind::Disconnect | ErrorKind::Fragment
        )
    }

    pub fn has_factor(self) -> bool {
        matches!(
            self,
            ErrorKind::GlobalThicken | ErrorKind::GlobalThin | ErrorKind::LocalThicken | ErrorKind::LocalThin
        )
    }
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Geometry that the instruction renderer needs but the error parameters
/// alone do not carry: where removed vessel used to run and how wide it was.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordHints {
    /// Voxel coordinates, ordered in the direction the vessel should be
    /// redrawn.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_mm: Option<f64>,
}

impl RecordHints {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.radius_mm.is_none()
    }
}

/// One applied (or dropped) error.
///
/// `magnitude` is a factor for thicken/thin kinds, the removed percentage for
/// `shorten`, the gap width in percent for `disconnect` and the sub-gap width
/// in percent for `fragment`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub kind: ErrorKind,
    pub segment_id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragment_count: Option<u32>,
    pub seed: u64,
    #[serde(default)]
    pub dropped: bool,
    #[serde(default, skip_serializing_if = "RecordHints::is_empty")]
    pub hints: RecordHints,
}

impl EditRecord {
    pub fn new(kind: ErrorKind, segment_id: u8, seed: u64) -> Self {
        Self {
            kind,
            segment_id,
            span: None,
            anchor: None,
            magnitude: None,
            fragment_count: None,
            seed,
            dropped: false,
            hints: RecordHints::default(),
        }
    }

    pub fn anchor_or_default(&self) -> Anchor {
        self.anchor.unwrap_or_default()
    }

    /// Checks the field combination required by `kind`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CorruptionError::InvalidRecord(format!("{}: {m}", self.kind)));
        match (self.kind.has_span(), self.span) {
            (true, None) => return bad("span required"),
            (false, Some(_)) => return bad("span not allowed"),
            (true, Some([lo, hi])) if !(0.0 <= lo && lo < hi && hi <= 100.0) => {
                return bad(&format!("span [{lo}, {hi}] out of order or range"))
            }
            _ => {}
        }
        if self.kind.has_factor() {
            match self.magnitude {
                Some(f) if f > 1.0 && f.is_finite() => {}
                _ => return bad("factor above 1 required"),
            }
        }
        if self.kind == ErrorKind::Fragment && !self.fragment_count.is_some_and(|n| n >= 2) {
            return bad("fragment_count of at least 2 required");
        }
        if self.kind == ErrorKind::MissingSegment && self.magnitude.is_some() {
            return bad("missing_segment carries no magnitude");
        }
        if self.kind != ErrorKind::Fragment && self.fragment_count.is_some() {
            return bad("fragment_count only applies to fragment");
        }
        Ok(())
    }
}

/// Sampling ranges. Percentages are integers so rendered instructions and
/// parsed spans agree exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub kinds: Vec<ErrorKind>,
    pub factor: [f64; 2],
    /// Bounds for local span endpoints and the minimum local span width.
    pub local_bounds: [u32; 2],
    pub local_min_width: u32,
    pub shorten_pct: [u32; 2],
    pub gap_pct: [u32; 2],
    pub fragment_count: [u32; 2],
    pub fragment_width: [u32; 2],
    pub fragment_subgap_pct: f64,
    /// Extra cylinder radius, as a multiple of the target caliber, allowed
    /// around a local span when thickening.
    pub local_radius_margin: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            kinds: ErrorKind::ALL.to_vec(),
            factor: [1.2, 2.0],
            local_bounds: [5, 95],
            local_min_width: 10,
            shorten_pct: [10, 40],
            gap_pct: [5, 20],
            fragment_count: [2, 4],
            fragment_width: [30, 60],
            fragment_subgap_pct: 3.0,
            local_radius_margin: 1.5,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CorruptionError::InvalidConfig(m));
        if self.kinds.is_empty() {
            return bad("no error kinds enabled".into());
        }
        let [flo, fhi] = self.factor;
        if !(flo > 1.0 && flo <= fhi && fhi.is_finite()) {
            return bad(format!("factor range [{flo}, {fhi}]"));
        }
        let [llo, lhi] = self.local_bounds;
        if !(llo < lhi && lhi <= 100 && lhi - llo >= self.local_min_width) {
            return bad(format!("local bounds [{llo}, {lhi}] with min width {}", self.local_min_width));
        }
        let ordered = |r: [u32; 2], max: u32| r[0] <= r[1] && r[1] <= max && r[0] > 0;
        if !ordered(self.shorten_pct, 99) {
            return bad(format!("shorten range {:?}", self.shorten_pct));
        }
        if !ordered(self.gap_pct, 60) {
            return bad(format!("gap range {:?}", self.gap_pct));
        }
        if !(self.fragment_count[0] >= 2 && self.fragment_count[0] <= self.fragment_count[1]) {
            return bad(format!("fragment count range {:?}", self.fragment_count));
        }
        if !ordered(self.fragment_width, 80) {
            return bad(format!("fragment width range {:?}", self.fragment_width));
        }
        if !(self.fragment_subgap_pct > 0.0 && self.fragment_subgap_pct < 10.0) {
            return bad(format!("fragment sub-gap {}", self.fragment_subgap_pct));
        }
        Ok(())
    }
}

fn int_in<R: Rng + ?Sized>(rng: &mut R, r: [u32; 2]) -> u32 {
    rng.random_range(r[0]..=r[1])
}

/// Draws one error record for `segment_id`. The kind is uniform over
/// `cfg.kinds`; its parameters are uniform over the configured ranges.
pub fn sample_error<R: Rng + ?Sized>(rng: &mut R, segment_id: u8, cfg: &CorruptionConfig) -> Result<EditRecord> {
    cfg.validate()?;
    let seed = rng.random::<u64>();
    let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
    let mut r = EditRecord::new(kind, segment_id, seed);
    let factor = |rng: &mut R| (rng.random_range(cfg.factor[0]..=cfg.factor[1]) * 100.0).round() / 100.0;
    let anchor = |rng: &mut R| if rng.random_bool(0.5) { Anchor::Proximal } else { Anchor::Distal };
    match kind {
        ErrorKind::GlobalThicken | ErrorKind::GlobalThin => r.magnitude = Some(factor(rng)),
        ErrorKind::LocalThicken | ErrorKind::LocalThin => {
            let (lo, hi) = loop {
                let a = int_in(rng, cfg.local_bounds);
                let b = int_in(rng, cfg.local_bounds);
                let (lo, hi) = (a.min(b), a.max(b));
                if hi - lo >= cfg.local_min_width {
                    break (lo, hi);
                }
            };
            r.span = Some([lo as f64, hi as f64]);
            r.anchor = Some(anchor(rng));
            r.magnitude = Some(factor(rng));
        }
        ErrorKind::MissingSegment => {}
        ErrorKind::Shorten => {
            let m = int_in(rng, cfg.shorten_pct);
            r.span = Some([0.0, m as f64]);
            r.anchor = Some(anchor(rng));
            r.magnitude = Some(m as f64);
        }
        ErrorKind::Disconnect => {
            let gap = int_in(rng, cfg.gap_pct);
            let lo = rng.random_range(15..=(85 - gap).max(15));
            r.span = Some([lo as f64, (lo + gap) as f64]);
            r.anchor = Some(anchor(rng));
            r.magnitude = Some(gap as f64);
        }
        ErrorKind::Fragment => {
            let n = int_in(rng, cfg.fragment_count);
            let w = int_in(rng, cfg.fragment_width);
            let lo = rng.random_range(10..=(90 - w).max(10));
            r.span = Some([lo as f64, (lo + w) as f64]);
            r.anchor = Some(anchor(rng));
            r.magnitude = Some(cfg.fragment_subgap_pct);
            r.fragment_count = Some(n);
        }
    }
    r.validate()?;
    Ok(r)
}
