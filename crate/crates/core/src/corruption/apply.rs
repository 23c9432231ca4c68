use std::collections::BTreeMap;

use super::{CorruptionConfig, CorruptionError, EditRecord, ErrorKind, RecordHints, Result};
use crate::centerline::{caliber, select_span, span_mask, span_region, Centerline};
use crate::geometry;
use crate::tube::{end_margin, grow_to_caliber, interior_nodes, measurement_nodes, shrink_to_caliber};
use crate::volume::{connected_components, Connectivity, LabelVolume};

const SPAN_HEIGHT_MARGIN: f64 = 1.5;
const REMOVAL_RADIUS_MARGIN: f64 = 1.5;

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn component_count(v: &LabelVolume, class: u8) -> Result<usize> {
    Ok(connected_components(&v.class_mask(class)?, Connectivity::TwentySix).len())
}

/// Applies one record to `v` using the segment's ground-truth centerline.
/// Only voxels of the record's segment and background voxels change.
pub fn apply_error(v: &LabelVolume, c: &Centerline, r: &EditRecord, cfg: &CorruptionConfig) -> Result<LabelVolume> {
    r.validate()?;
    if c.segment_id() != r.segment_id {
        return Err(CorruptionError::InvalidRecord(format!(
            "centerline is for segment {}, record for {}",
            c.segment_id(),
            r.segment_id
        )));
    }
    let class = r.segment_id;
    let seg = v.class_mask(class)?;
    if seg.is_empty() {
        return Err(CorruptionError::EmptySegment(class));
    }
    let anchor = r.anchor_or_default();
    let span = |lo: f64, hi: f64| select_span(c, lo, hi, anchor);
    let factor = r.magnitude.unwrap_or(1.0);
    match r.kind {
        ErrorKind::GlobalThicken | ErrorKind::GlobalThin => {
            let measure = interior_nodes(c, end_margin(c));
            let before = caliber(&seg, c, &measure);
            let edit = if r.kind == ErrorKind::GlobalThicken {
                grow_to_caliber(v, c, &measure, None, before * factor)?
            } else {
                shrink_to_caliber(v, c, &measure, None, before / factor)?
            };
            Ok(edit.volume)
        }
        ErrorKind::LocalThicken | ErrorKind::LocalThin => {
            let [lo, hi] = r.span.unwrap();
            let nodes = span(lo, hi)?;
            let mut measure = measurement_nodes(c, &nodes);
            if measure.is_empty() {
                measure = nodes.clone();
            }
            let before = caliber(&seg, c, &measure);
            let thicken = r.kind == ErrorKind::LocalThicken;
            let target = if thicken { before * factor } else { before / factor };
            let rho = before.max(target) * cfg.local_radius_margin + 2.0;
            let region = span_region(v.dims(), v.spacing(), c, &nodes, |_| rho, SPAN_HEIGHT_MARGIN);
            let edit = if thicken {
                grow_to_caliber(v, c, &measure, Some(&region), target)?
            } else {
                shrink_to_caliber(v, c, &measure, Some(&region), target)?
            };
            Ok(edit.volume)
        }
        ErrorKind::MissingSegment => {
            let mut out = v.clone();
            out.clear_class(class, &seg)?;
            Ok(out)
        }
        ErrorKind::Shorten | ErrorKind::Disconnect => {
            let [lo, hi] = r.span.unwrap();
            let m = span_mask(v, c, &span(lo, hi)?, REMOVAL_RADIUS_MARGIN)?;
            let mut out = v.clone();
            out.clear_class(class, &m)?;
            if out.class_mask(class)?.is_empty() {
                return Err(CorruptionError::Unrealized(format!("{} removed the whole segment", r.kind)));
            }
            if r.kind == ErrorKind::Disconnect && component_count(&out, class)? < 2 {
                return Err(CorruptionError::Unrealized("gap did not split the segment".into()));
            }
            Ok(out)
        }
        ErrorKind::Fragment => {
            let [lo, hi] = r.span.unwrap();
            let n = r.fragment_count.unwrap();
            let half = r.magnitude.unwrap_or(cfg.fragment_subgap_pct) / 200.0;
            let fr = c.fractions_from(anchor);
            let mut out = v.clone();
            for k in 1..n {
                let center = (lo + (hi - lo) * k as f64 / n as f64) / 100.0;
                let mut nodes: Vec<usize> = (0..c.len()).filter(|&i| (fr[i] - center).abs() <= half + 1e-9).collect();
                if nodes.is_empty() {
                    let nearest = (0..c.len())
                        .min_by(|&a, &b| (fr[a] - center).abs().total_cmp(&(fr[b] - center).abs()))
                        .unwrap();
                    nodes.push(nearest);
                }
                let m = span_mask(v, c, &nodes, REMOVAL_RADIUS_MARGIN)?;
                out.clear_class(class, &m)?;
            }
            if component_count(&out, class)? < n as usize {
                return Err(CorruptionError::Unrealized(format!("fewer than {n} fragments")));
            }
            Ok(out)
        }
    }
}

/// Fills in [`RecordHints`] for kinds whose corrective instruction needs
/// geometry from the ground truth: waypoints and caliber for `missing`, and
/// waypoints over the removed stretch for `shorten`. Other records are
/// returned unchanged.
pub fn annotate_record(r: &EditRecord, c: &Centerline, gt: &LabelVolume) -> Result<EditRecord> {
    let mut out = r.clone();
    let path = c.main_path();
    match r.kind {
        ErrorKind::MissingSegment => {
            let mut cum = vec![0.0];
            for w in path.windows(2) {
                cum.push(cum.last().unwrap() + geometry::dist(c.nodes()[w[0]], c.nodes()[w[1]]));
            }
            let total = *cum.last().unwrap();
            let n = ((total / 10.0).ceil() as usize + 1).clamp(2, 16);
            let mut points = Vec::with_capacity(n);
            for k in 0..n {
                let s = total * k as f64 / (n - 1) as f64;
                let j = cum.partition_point(|&x| x < s).min(path.len() - 1);
                points.push(c.nodes()[path[j]].map(round1));
            }
            points.dedup();
            let seg = gt.class_mask(r.segment_id)?;
            let cal = caliber(&seg, c, &interior_nodes(c, end_margin(c)));
            out.hints = RecordHints {
                points,
                radius_mm: Some(round1(cal * gt.mean_spacing()).max(0.1)),
            };
        }
        ErrorKind::Shorten => {
            let m = r.span.unwrap()[1] / 100.0;
            let anchor = r.anchor_or_default();
            let fr = c.fractions_from(anchor);
            let removed = m * c.length();
            let n = ((removed / 12.0).ceil() as usize).clamp(2, 8);
            let mut points = Vec::with_capacity(n);
            for k in 1..=n {
                let f = m * (1.0 - k as f64 / n as f64);
                let j = (0..c.len())
                    .min_by(|&a, &b| (fr[a] - f).abs().total_cmp(&(fr[b] - f).abs()))
                    .unwrap();
                points.push(c.nodes()[j].map(round1));
            }
            points.dedup();
            out.hints = RecordHints {
                points,
                radius_mm: None,
            };
        }
        _ => {}
    }
    Ok(out)
}

/// Applies every non-dropped record in order, each against its segment's
/// ground-truth centerline.
pub fn apply_records(
    gt: &LabelVolume,
    centerlines: &BTreeMap<u8, Centerline>,
    records: &[EditRecord],
    cfg: &CorruptionConfig,
) -> Result<LabelVolume> {
    let mut v = gt.clone();
    for r in records.iter().filter(|r| !r.dropped) {
        let c = centerlines
            .get(&r.segment_id)
            .ok_or(CorruptionError::MissingCenterline(r.segment_id))?;
        v = apply_error(&v, c, r, cfg)?;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centerline::Anchor;
    use crate::phantom::{Phantom, PhantomKind, TUBE_CLASS};

    fn rec(kind: ErrorKind) -> EditRecord {
        let mut r = EditRecord::new(kind, TUBE_CLASS, 0);
        match kind {
            ErrorKind::GlobalThicken | ErrorKind::GlobalThin => r.magnitude = Some(1.5),
            ErrorKind::LocalThicken | ErrorKind::LocalThin => {
                r.span = Some([30.0, 60.0]);
                r.magnitude = Some(1.5);
            }
            ErrorKind::MissingSegment => {}
            ErrorKind::Shorten => {
                r.span = Some([0.0, 25.0]);
                r.anchor = Some(Anchor::Distal);
                r.magnitude = Some(25.0);
            }
            ErrorKind::Disconnect => {
                r.span = Some([40.0, 50.0]);
                r.magnitude = Some(10.0);
            }
            ErrorKind::Fragment => {
                r.span = Some([30.0, 70.0]);
                r.magnitude = Some(3.0);
                r.fragment_count = Some(3);
            }
        }
        r
    }

    #[test]
    fn every_kind_changes_only_its_segment() {
        let p = Phantom::tube(PhantomKind::Straight);
        let c = &p.centerlines[&TUBE_CLASS];
        for kind in ErrorKind::ALL {
            let out = apply_error(&p.volume, c, &rec(kind), &CorruptionConfig::default()).unwrap();
            assert!(out.changed_voxels(&p.volume) > 0, "{kind}");
            for (a, b) in p.volume.labels().iter().zip(out.labels()) {
                if a != b {
                    assert!(
                        (*a == TUBE_CLASS && *b == 0) || (*a == 0 && *b == TUBE_CLASS),
                        "{kind}: {a} -> {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn topology_of_removals() {
        let p = Phantom::tube(PhantomKind::Straight);
        let c = &p.centerlines[&TUBE_CLASS];
        let cfg = CorruptionConfig::default();
        let d = apply_error(&p.volume, c, &rec(ErrorKind::Disconnect), &cfg).unwrap();
        assert_eq!(component_count(&d, TUBE_CLASS).unwrap(), 2);
        let f = apply_error(&p.volume, c, &rec(ErrorKind::Fragment), &cfg).unwrap();
        assert!(component_count(&f, TUBE_CLASS).unwrap() >= 3);
        let m = apply_error(&p.volume, c, &rec(ErrorKind::MissingSegment), &cfg).unwrap();
        assert!(m.class_mask(TUBE_CLASS).unwrap().is_empty());
    }

    #[test]
    fn hints_for_missing_and_shorten() {
        let p = Phantom::tube(PhantomKind::Straight);
        let c = &p.centerlines[&TUBE_CLASS];
        let m = annotate_record(&rec(ErrorKind::MissingSegment), c, &p.volume).unwrap();
        assert!(m.hints.points.len() >= 2 && m.hints.radius_mm.unwrap() > 2.5);
        let s = annotate_record(&rec(ErrorKind::Shorten), c, &p.volume).unwrap();
        // Last waypoint is the distal tip.
        let tip = c.nodes()[c.distal()].map(round1);
        assert_eq!(*s.hints.points.last().unwrap(), tip);
    }
}
