//! Overlap and surface metrics for label volumes.
//!
//! Surfaces are the 6-neighborhood boundary voxels of a mask, taken at their
//! voxel centers in millimeters. Nearest-surface distances are exact: they
//! come from a Euclidean distance transform of the other surface, computed on
//! the joint bounding box of both masks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{EditRecord, ErrorKind};
use crate::volume::{distance_to_set_mm, surface_mask, BinaryMask, LabelVolume};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    Dims([usize; 3], [usize; 3]),
    #[error("spacing mismatch: {0:?} vs {1:?}")]
    Spacing([f64; 3], [f64; 3]),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("undefined chamfer: a surface is empty")]
    UndefinedChamfer,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn check(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(MetricsError::Dims(a.dims(), b.dims()));
    }
    if a.spacing() != b.spacing() {
        return Err(MetricsError::Spacing(a.spacing(), b.spacing()));
    }
    Ok(())
}

/// `2|P ∩ G| / (|P| + |G|)`, or 1 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let (p, g) = (pred.count(), gt.count());
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * pred.intersection_count(gt) as f64 / (p + g) as f64)
}

/// For each surface voxel of `a` and of `b`, the distance in mm to the other
/// surface. `None` when either surface is empty.
fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Option<(Vec<f64>, Vec<f64>)> {
    let bb = a.bounding_box()?.union(&b.bounding_box()?);
    let (ca, cb) = (a.crop(&bb), b.crop(&bb));
    let (sa, sb) = (surface_mask(&ca), surface_mask(&cb));
    let (da, db) = (distance_to_set_mm(&sb), distance_to_set_mm(&sa));
    let a_to_b = sa.indices().map(|i| da[i]).collect();
    let b_to_a = sb.indices().map(|i| db[i]).collect();
    Some((a_to_b, b_to_a))
}

/// Normalized surface Dice at tolerance `tau_mm`: the fraction of surface
/// voxels of both masks lying within `tau_mm` of the other surface. 1 when
/// both surfaces are empty, 0 when exactly one is.
pub fn nsd(pred: &BinaryMask, gt: &BinaryMask, tau_mm: f64) -> Result<f64> {
    check(pred, gt)?;
    if !(tau_mm > 0.0 && tau_mm.is_finite()) {
        return Err(MetricsError::Tolerance(tau_mm));
    }
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (pg, gp) = surface_distances(pred, gt).expect("both masks nonempty");
    let hit = pg.iter().chain(&gp).filter(|&&d| d <= tau_mm).count();
    Ok(hit as f64 / (pg.len() + gp.len()) as f64)
}

/// Symmetric mean nearest-surface distance in mm.
pub fn chamfer(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let (pg, gp) = surface_distances(pred, gt).ok_or(MetricsError::UndefinedChamfer)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&pg) + mean(&gp)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub detection_f1: f64,
    pub micro_f1: f64,
}

fn check_volumes(pred: &LabelVolume, gt: &LabelVolume) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(MetricsError::Dims(pred.dims(), gt.dims()));
    }
    if pred.spacing() != gt.spacing() {
        return Err(MetricsError::Spacing(pred.spacing(), gt.spacing()));
    }
    Ok(())
}

fn class_dice(pred: &LabelVolume, gt: &LabelVolume, class: u8) -> f64 {
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        p += (a == class) as usize;
        g += (b == class) as usize;
        inter += (a == class && b == class) as usize;
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

/// Detection F1 over classes (a GT class is detected when its Dice reaches
/// `threshold`; predicted classes absent from GT are false positives) and
/// voxel-level F1 over all foreground pooled as one class.
pub fn f1_scores(pred: &LabelVolume, gt: &LabelVolume, threshold: f64) -> Result<F1Scores> {
    check_volumes(pred, gt)?;
    let gt_classes: BTreeSet<u8> = gt.present_classes().into_iter().collect();
    let pred_classes: BTreeSet<u8> = pred.present_classes().into_iter().collect();
    let mut tp = 0usize;
    let mut fn_ = 0usize;
    for &c in &gt_classes {
        if class_dice(pred, gt, c) >= threshold {
            tp += 1;
        } else {
            fn_ += 1;
        }
    }
    let fp = pred_classes.difference(&gt_classes).count();
    let detection_f1 = if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        p += (a != 0) as usize;
        g += (b != 0) as usize;
        inter += (a != 0 && b != 0) as usize;
    }
    let micro_f1 = if p + g == 0 { 1.0 } else { 2.0 * inter as f64 / (p + g) as f64 };
    Ok(F1Scores { detection_f1, micro_f1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dice: f64,
    pub nsd: f64,
    /// Absent when either surface is empty.
    pub chamfer_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindDelta {
    pub count: usize,
    pub dice_delta: f64,
    pub nsd_delta: f64,
    /// Mean over records where chamfer is defined before and after.
    pub chamfer_delta_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<u8, ClassMetrics>,
    pub macro_dice: f64,
    pub macro_nsd: f64,
    pub mean_chamfer_mm: Option<f64>,
    pub detection_f1: f64,
    pub micro_f1: f64,
    pub nsd_tau_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_error_kind: Option<BTreeMap<ErrorKind, KindDelta>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub nsd_tau_mm: f64,
    pub detection_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nsd_tau_mm: 1.0,
            detection_threshold: 0.5,
        }
    }
}

/// Per-class metrics over classes present in `gt` (plus, scored zero,
/// classes only present in `pred`) and their aggregates.
pub fn evaluate(pred: &LabelVolume, gt: &LabelVolume, cfg: &EvalConfig) -> Result<MetricsReport> {
    check_volumes(pred, gt)?;
    if !(cfg.nsd_tau_mm > 0.0 && cfg.nsd_tau_mm.is_finite()) {
        return Err(MetricsError::Tolerance(cfg.nsd_tau_mm));
    }
    let gt_classes = gt.present_classes();
    let mut classes: BTreeSet<u8> = gt_classes.iter().copied().collect();
    classes.extend(pred.present_classes());
    let mut per_class = BTreeMap::new();
    for &c in &classes {
        let (p, g) = (pred.mask_where(|l| l == c), gt.mask_where(|l| l == c));
        let m = ClassMetrics {
            dice: dice(&p, &g)?,
            nsd: nsd(&p, &g, cfg.nsd_tau_mm)?,
            chamfer_mm: chamfer(&p, &g).ok(),
        };
        per_class.insert(c, m);
    }
    let n = per_class.len().max(1) as f64;
    let macro_dice = if per_class.is_empty() { 1.0 } else { per_class.values().map(|m| m.dice).sum::<f64>() / n };
    let macro_nsd = if per_class.is_empty() { 1.0 } else { per_class.values().map(|m| m.nsd).sum::<f64>() / n };
    let chamfers: Vec<f64> = per_class.values().filter_map(|m| m.chamfer_mm).collect();
    let mean_chamfer_mm = (!chamfers.is_empty()).then(|| chamfers.iter().sum::<f64>() / chamfers.len() as f64);
    let f1 = f1_scores(pred, gt, cfg.detection_threshold)?;
    Ok(MetricsReport {
        per_class,
        macro_dice,
        macro_nsd,
        mean_chamfer_mm,
        detection_f1: f1.detection_f1,
        micro_f1: f1.micro_f1,
        nsd_tau_mm: cfg.nsd_tau_mm,
        by_error_kind: None,
    })
}

/// One evaluated sample for grouped reporting: its records plus the
/// erroneous-input and refined reports, both scored against ground truth.
#[derive(Clone, Debug)]
pub struct GroupedSample<'a> {
    pub records: &'a [EditRecord],
    pub input: &'a MetricsReport,
    pub refined: &'a MetricsReport,
}

/// Mean per-segment improvement (refined minus input) for each error kind,
/// over non-dropped records.
pub fn by_error_kind(samples: &[GroupedSample<'_>]) -> BTreeMap<ErrorKind, KindDelta> {
    #[derive(Default)]
    struct Acc {
        n: usize,
        dice: f64,
        nsd: f64,
        chamfer: f64,
        chamfer_n: usize,
    }
    let mut acc: BTreeMap<ErrorKind, Acc> = BTreeMap::new();
    for s in samples {
        for r in s.records.iter().filter(|r| !r.dropped) {
            let (Some(a), Some(b)) = (s.input.per_class.get(&r.segment_id), s.refined.per_class.get(&r.segment_id)) else {
                continue;
            };
            let e = acc.entry(r.kind).or_default();
            e.n += 1;
            e.dice += b.dice - a.dice;
            e.nsd += b.nsd - a.nsd;
            if let (Some(ca), Some(cb)) = (a.chamfer_mm, b.chamfer_mm) {
                e.chamfer += cb - ca;
                e.chamfer_n += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(k, a)| {
            let n = a.n as f64;
            let delta = KindDelta {
                count: a.n,
                dice_delta: a.dice / n,
                nsd_delta: a.nsd / n,
                chamfer_delta_mm: (a.chamfer_n > 0).then(|| a.chamfer / a.chamfer_n as f64),
            };
            (k, delta)
        })
        .collect()
}

/// Grouped table as CSV: one row per error kind.
pub fn grouped_csv(groups: &BTreeMap<ErrorKind, KindDelta>) -> String {
    let mut out = String::from("error_kind,count,dice_delta,nsd_delta,chamfer_delta_mm\n");
    for (k, d) in groups {
        let ch = d.chamfer_delta_mm.map(|c| format!("{c:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{k},{},{:.6},{:.6},{ch}", d.count, d.dice_delta, d.nsd_delta);
    }
    out
}

/// Per-class rows of a report as CSV.
pub fn report_csv(r: &MetricsReport) -> String {
    let mut out = String::from("class,dice,nsd,chamfer_mm\n");
    for (c, m) in &r.per_class {
        let ch = m.chamfer_mm.map(|c| format!("{c:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{c},{:.6},{:.6},{ch}", m.dice, m.nsd);
    }
    out
}
