use crate::centerline::{
    caliber, select_span, skeletonize, span_mask, span_region, Anchor, Centerline, CenterlineError, ProximalTable,
};
use crate::geometry::{self, Vec3};
use crate::instruction::{Action, EditCommand, Magnitude};
use crate::tube::{end_margin, grow_to_caliber, interior_nodes, measurement_nodes, shrink_to_caliber};
use crate::volume::{connected_components, distance_to_set_mm, distance_transform, BinaryMask, Connectivity, LabelVolume};

use super::{RefineError, Result};

const SPAN_HEIGHT_MARGIN: f64 = 1.5;
const REGION_RADIUS_MARGIN: f64 = 1.5;
const REMOVAL_RADIUS_MARGIN: f64 = 1.5;
/// Nodes stepped back from a tip when estimating its outward direction.
const TANGENT_REACH: usize = 5;
/// Arc-distance window behind a tip over which the stump caliber is measured.
const STUMP_WINDOW: (f64, f64) = (1.5, 8.0);

/// Open end of a segment piece: position, outward unit direction (absent for
/// pieces too short to have an axis) and radius in voxels.
#[derive(Clone, Copy, Debug)]
struct Stump {
    point: Vec3,
    outward: Option<Vec3>,
    radius: f64,
}

fn cumulative(c: &Centerline, path: &[usize]) -> Vec<f64> {
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + geometry::dist(c.nodes()[w[0]], c.nodes()[w[1]]));
    }
    cum
}

/// Main path ordered from the tip `end` inward.
fn path_from(c: &Centerline, end: usize) -> Vec<usize> {
    let mut path = c.main_path();
    if path.last() == Some(&end) {
        path.reverse();
    }
    path
}

fn stump_at(mask: &BinaryMask, c: &Centerline, end: usize) -> Stump {
    let path = path_from(c, end);
    let cum = cumulative(c, &path);
    let back = path[TANGENT_REACH.min(path.len() - 1)];
    let outward = geometry::normalize(geometry::sub(c.nodes()[end], c.nodes()[back]));
    let window: Vec<usize> = path
        .iter()
        .zip(&cum)
        .filter(|(_, &s)| s >= STUMP_WINDOW.0 && s <= STUMP_WINDOW.1)
        .map(|(&i, _)| i)
        .collect();
    let nodes = if window.is_empty() { path.clone() } else { window };
    Stump {
        point: c.nodes()[end],
        outward,
        radius: caliber(mask, c, &nodes).max(0.5),
    }
}

fn centroid(mask: &BinaryMask) -> Vec3 {
    let g = mask.grid();
    let mut s = [0.0; 3];
    let mut n = 0.0;
    for i in mask.indices() {
        s = geometry::add(s, geometry::to_f64(g.coords(i)));
        n += 1.0;
    }
    geometry::scale(s, 1.0 / n)
}

/// Minimum ratio of the two largest coordinate variances for a piece to
/// count as elongated. A stub of radius r needs to be about 2.5 r long.
const ELONGATION: f64 = 2.0;

fn is_elongated(mask: &BinaryMask, center: Vec3) -> bool {
    let g = mask.grid();
    let mut cov = [[0.0; 3]; 3];
    for i in mask.indices() {
        let d = geometry::sub(geometry::to_f64(g.coords(i)), center);
        for (r, row) in cov.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x += d[r] * d[c];
            }
        }
    }
    let [l1, l2, _] = geometry::symmetric_eigenvalues(cov);
    l1 >= ELONGATION * l2
}

/// Open ends of one connected piece. Pieces that are not clearly longer
/// than wide are treated as a single blob centered at their centroid, as
/// thick as their deepest voxel.
fn piece_stumps(piece: &BinaryMask) -> Vec<Stump> {
    let center = centroid(piece);
    if is_elongated(piece, center) {
        if let Ok(c) = skeletonize(piece) {
            return c.endpoints().iter().map(|&e| stump_at(piece, &c, e)).collect();
        }
    }
    let depth = distance_transform(piece).into_iter().fold(0.0, f64::max);
    vec![Stump {
        point: center,
        outward: None,
        radius: depth.max(0.5),
    }]
}

/// Cubic Hermite connection between two stumps, both tangents following the
/// direction of travel, with linearly interpolated radii.
fn bridge_mask(v: &LabelVolume, a: &Stump, b: &Stump) -> BinaryMask {
    let d = geometry::dist(a.point, b.point);
    let chord = geometry::sub(b.point, a.point);
    let m0 = a.outward.map_or(chord, |t| geometry::scale(t, d));
    let m1 = b.outward.map_or(chord, |t| geometry::scale(t, -d));
    let path = geometry::sample_hermite(a.point, m0, b.point, m1, 0.5);
    let n = path.len().max(2) as f64 - 1.0;
    let radii: Vec<f64> = (0..path.len())
        .map(|k| a.radius + (b.radius - a.radius) * k as f64 / n)
        .collect();
    geometry::stamp_tube(v.dims(), v.spacing(), &path, &radii)
}

/// Joins the closest pair of open ends lying on different pieces of the
/// segment. Returns the number of pieces before the join.
fn bridge_once(v: &mut LabelVolume, class: u8) -> Result<usize> {
    let seg = v.class_mask(class)?;
    if seg.is_empty() {
        return Err(RefineError::EmptySegment(class));
    }
    let bb = seg.bounding_box().unwrap().padded(1, seg.dims());
    let pieces = connected_components(&seg.crop(&bb), Connectivity::TwentySix);
    if pieces.len() < 2 {
        return Err(RefineError::NoStumps(class));
    }
    let origin = bb.origin();
    let stumps: Vec<Vec<Stump>> = pieces
        .iter()
        .map(|p| {
            piece_stumps(p)
                .into_iter()
                .map(|s| Stump {
                    point: geometry::add(s.point, origin),
                    ..s
                })
                .collect()
        })
        .collect();
    let mut best: Option<(f64, Stump, Stump)> = None;
    for i in 0..stumps.len() {
        for j in i + 1..stumps.len() {
            for a in &stumps[i] {
                for b in &stumps[j] {
                    let d = geometry::dist(a.point, b.point);
                    if best.as_ref().is_none_or(|(bd, _, _)| d < *bd) {
                        best = Some((d, *a, *b));
                    }
                }
            }
        }
    }
    let (_, a, b) = best.expect("at least two pieces");
    v.paint_background(class, &bridge_mask(v, &a, &b))?;
    Ok(pieces.len())
}

fn piece_count(v: &LabelVolume, class: u8) -> Result<usize> {
    let seg = v.class_mask(class)?;
    let Some(bb) = seg.bounding_box() else {
        return Ok(0);
    };
    Ok(connected_components(&seg.crop(&bb.padded(1, seg.dims())), Connectivity::TwentySix).len())
}

/// Target caliber for a thicken/thin command.
fn target_caliber(cmd: &EditCommand, before: f64, mm_per_voxel: f64) -> Result<f64> {
    let grow = cmd.action == Action::Thicken;
    let sign = if grow { 1.0 } else { -1.0 };
    let m = cmd
        .magnitude
        .ok_or_else(|| RefineError::InsufficientParameters(format!("{} needs a magnitude", cmd.action)))?;
    let target = match m {
        Magnitude::Factor(f) if grow => before * f,
        Magnitude::Factor(f) => before / f,
        Magnitude::Percent(p) if grow => before * (1.0 + p / 100.0),
        Magnitude::Percent(p) => before / (1.0 + p / 100.0),
        Magnitude::Voxels(d) => before + sign * d,
        Magnitude::Millimeters(d) => before + sign * d / mm_per_voxel,
        Magnitude::RadiusMm(r) => r / mm_per_voxel,
    };
    if target.is_nan() || target <= 0.0 {
        return Err(RefineError::InsufficientParameters(format!(
            "{m:?} leaves no caliber from {before:.2} voxels"
        )));
    }
    Ok(target)
}

fn resize(v: &LabelVolume, c: &Centerline, cmd: &EditCommand) -> Result<LabelVolume> {
    let seg = v.class_mask(cmd.segment_id)?;
    let (measure, region) = match cmd.span {
        None => (interior_nodes(c, end_margin(c)), None),
        Some(s) => {
            let nodes = select_span(c, s.lo, s.hi, s.anchor)?;
            let mut measure = measurement_nodes(c, &nodes);
            if measure.is_empty() {
                measure = nodes.clone();
            }
            (measure, Some(nodes))
        }
    };
    let before = caliber(&seg, c, &measure);
    let target = target_caliber(cmd, before, v.mean_spacing())?;
    let region = region.map(|nodes| {
        let rho = before.max(target) * REGION_RADIUS_MARGIN + 2.0;
        span_region(v.dims(), v.spacing(), c, &nodes, |_| rho, SPAN_HEIGHT_MARGIN)
    });
    let edit = if target >= before {
        grow_to_caliber(v, c, &measure, region.as_ref(), target)?
    } else {
        shrink_to_caliber(v, c, &measure, region.as_ref(), target)?
    };
    Ok(edit.volume)
}

fn extend(v: &LabelVolume, c: &Centerline, cmd: &EditCommand) -> Result<LabelVolume> {
    let seg = v.class_mask(cmd.segment_id)?;
    let anchor = cmd.span.map_or(Anchor::Distal, |s| s.anchor);
    let tip = c.anchor_node(anchor);
    let stump = stump_at(&seg, c, tip);
    let outward = stump
        .outward
        .ok_or_else(|| RefineError::InsufficientParameters("segment tip has no direction".into()))?;
    let path = if !cmd.hints.points.is_empty() {
        let mut pts = vec![stump.point];
        pts.extend(cmd.hints.points.iter().copied());
        pts.dedup();
        geometry::catmull_rom(&pts, Some(outward), 0.5)
    } else {
        let length = match cmd.magnitude {
            // The percentage is the share of the full vessel that is missing.
            Some(Magnitude::Percent(p)) if p < 100.0 => c.length() * p / (100.0 - p),
            Some(Magnitude::Voxels(n)) => n,
            Some(Magnitude::Millimeters(mm)) => mm / v.mean_spacing(),
            _ => {
                return Err(RefineError::InsufficientParameters(
                    "extend needs waypoints or a length".into(),
                ))
            }
        };
        vec![stump.point, geometry::add(stump.point, geometry::scale(outward, length))]
    };
    let radii = vec![stump.radius; path.len()];
    let mut out = v.clone();
    out.paint_background(cmd.segment_id, &geometry::stamp_tube(v.dims(), v.spacing(), &path, &radii))?;
    Ok(out)
}

/// Closest voxel pair between two segments, in voxel coordinates.
fn closest_pair(a: &BinaryMask, b: &BinaryMask) -> Option<(Vec3, Vec3)> {
    let g = a.grid();
    let db = distance_to_set_mm(b);
    let pa = a.indices().min_by(|&i, &j| db[i].total_cmp(&db[j]))?;
    let pa = geometry::to_f64(g.coords(pa));
    let pb = b
        .indices()
        .map(|i| geometry::to_f64(g.coords(i)))
        .min_by(|p, q| geometry::dist2(*p, pa).total_cmp(&geometry::dist2(*q, pa)))?;
    Some((pa, pb))
}

fn segment_caliber(v: &LabelVolume, class: u8) -> Option<f64> {
    let m = v.class_mask(class).ok()?;
    let c = skeletonize(&m).ok()?;
    Some(caliber(&m, &c, &interior_nodes(&c, end_margin(&c))))
}

fn restore(v: &LabelVolume, cmd: &EditCommand) -> Result<LabelVolume> {
    let mpv = v.mean_spacing();
    let given_radius = match cmd.magnitude {
        Some(Magnitude::RadiusMm(r)) => Some(r / mpv),
        Some(Magnitude::Millimeters(r)) => Some(r / mpv),
        Some(Magnitude::Voxels(r)) => Some(r),
        _ => None,
    };
    let (path, radius) = if cmd.hints.points.len() >= 2 {
        let radius = given_radius
            .ok_or_else(|| RefineError::InsufficientParameters("restore needs a radius".into()))?;
        (geometry::catmull_rom(&cmd.hints.points, None, 0.5), radius)
    } else if let Some([a, b]) = cmd.hints.attach {
        let (ma, mb) = (v.class_mask(a)?, v.class_mask(b)?);
        let (pa, pb) = closest_pair(&ma, &mb).ok_or_else(|| {
            RefineError::InsufficientParameters(format!("segments {a} and {b} must both be present"))
        })?;
        let radius = match given_radius {
            Some(r) => r,
            None => {
                let cal: Vec<f64> = [a, b].iter().filter_map(|&s| segment_caliber(v, s)).collect();
                if cal.is_empty() {
                    return Err(RefineError::InsufficientParameters("no radius to borrow".into()));
                }
                cal.iter().sum::<f64>() / cal.len() as f64
            }
        };
        (vec![pa, pb], radius)
    } else {
        return Err(RefineError::InsufficientParameters(
            "restore needs waypoints or two segments to connect".into(),
        ));
    };
    let radii = vec![radius; path.len()];
    let mut out = v.clone();
    out.paint_background(cmd.segment_id, &geometry::stamp_tube(v.dims(), v.spacing(), &path, &radii))?;
    Ok(out)
}

fn remove(v: &LabelVolume, c: Option<&Centerline>, cmd: &EditCommand) -> Result<LabelVolume> {
    let seg = v.class_mask(cmd.segment_id)?;
    let mask = match cmd.span {
        None => seg,
        Some(s) => {
            let c = c.ok_or(RefineError::MissingCenterline(cmd.segment_id))?;
            span_mask(v, c, &select_span(c, s.lo, s.hi, s.anchor)?, REMOVAL_RADIUS_MARGIN)?
        }
    };
    let mut out = v.clone();
    out.clear_class(cmd.segment_id, &mask)?;
    Ok(out)
}

/// Whether `action` reads the target segment's centerline.
pub fn needs_centerline(cmd: &EditCommand) -> bool {
    match cmd.action {
        Action::Thicken | Action::Thin | Action::Extend => true,
        Action::Remove => cmd.span.is_some(),
        Action::RestoreSegment | Action::Bridge | Action::Consolidate => false,
    }
}

/// Centerline of the segment as it currently stands: the skeleton of its
/// largest piece, with the proximal end chosen from the parent table.
pub fn current_centerline(v: &LabelVolume, class: u8, table: &ProximalTable) -> Result<Centerline> {
    let m = v.class_mask(class)?;
    if m.is_empty() {
        return Err(RefineError::EmptySegment(class));
    }
    let c = skeletonize(&m).map_err(|e| match e {
        CenterlineError::EmptyMask => RefineError::EmptySegment(class),
        e => RefineError::Centerline(e),
    })?;
    Ok(c.with_segment_id(class).anchored(v, table))
}

/// Applies one command to a copy of `v`. `c` is the target segment's
/// centerline, required by thicken, thin, extend and span removals. Only
/// voxels of the target class and background voxels change.
pub fn apply_command(v: &LabelVolume, c: Option<&Centerline>, cmd: &EditCommand) -> Result<LabelVolume> {
    cmd.validate().map_err(RefineError::InvalidCommand)?;
    let class = cmd.segment_id;
    if !v.label_map().contains_key(&class) {
        return Err(RefineError::UnknownSegment(class));
    }
    let centerline = || -> Result<&Centerline> {
        let c = c.ok_or(RefineError::MissingCenterline(class))?;
        if c.segment_id() != class {
            return Err(RefineError::InvalidCommand(format!(
                "centerline is for segment {}, command for {class}",
                c.segment_id()
            )));
        }
        Ok(c)
    };
    match cmd.action {
        Action::Thicken | Action::Thin => {
            if v.class_mask(class)?.is_empty() {
                return Err(RefineError::EmptySegment(class));
            }
            resize(v, centerline()?, cmd)
        }
        Action::Extend => {
            if v.class_mask(class)?.is_empty() {
                return Err(RefineError::EmptySegment(class));
            }
            extend(v, centerline()?, cmd)
        }
        Action::Bridge => {
            let mut out = v.clone();
            bridge_once(&mut out, class)?;
            Ok(out)
        }
        Action::Consolidate => {
            let mut out = v.clone();
            let mut pieces = bridge_once(&mut out, class)?;
            loop {
                let now = piece_count(&out, class)?;
                if now <= 1 || now >= pieces {
                    break;
                }
                pieces = now;
                bridge_once(&mut out, class)?;
            }
            Ok(out)
        }
        Action::RestoreSegment => restore(v, cmd),
        Action::Remove => {
            if cmd.span.is_some() {
                centerline()?;
            }
            remove(v, c, cmd)
        }
    }
}
