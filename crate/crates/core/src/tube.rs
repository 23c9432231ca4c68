//! Radius-targeted growth and shrinkage of one segment.
//!
//! Edits restamp the tube as a capsule around its core axis (the centerline
//! minus one caliber at each tip): growth adds background voxels in order of
//! increasing distance to that axis, and shrinkage removes segment voxels in
//! order of decreasing distance. Voxels
//! at equal distance flip together. The cut-off is picked so that the
//! segment's area-equivalent caliber over a set of measurement nodes lands
//! closest to the target.

use crate::centerline::{caliber, nearest_node_assignment, nearest_node_index, Centerline};
use crate::geometry::{self, Vec3};
use crate::volume::{squared_edt, BinaryMask, LabelVolume, Result, BACKGROUND};

/// Outcome of a caliber-targeted edit.
#[derive(Clone, Debug)]
pub struct CaliberEdit {
    pub volume: LabelVolume,
    /// Caliber over the measurement nodes before and after the edit.
    pub before: f64,
    pub after: f64,
    /// Axis distance of the last flipped voxel, in voxels.
    pub level: f64,
}

/// Main-path nodes whose arc distance from both ends is at least `margin`.
/// Falls back to the whole main path when nothing qualifies.
pub fn interior_nodes(c: &Centerline, margin: f64) -> Vec<usize> {
    let path = c.main_path();
    let mut cum = vec![0.0; path.len()];
    for k in 1..path.len() {
        cum[k] = cum[k - 1] + geometry::dist(c.nodes()[path[k - 1]], c.nodes()[path[k]]);
    }
    let total = *cum.last().unwrap_or(&0.0);
    let inner: Vec<usize> = path
        .iter()
        .zip(&cum)
        .filter(|(_, &s)| s >= margin && total - s >= margin)
        .map(|(&i, _)| i)
        .collect();
    if inner.is_empty() {
        path
    } else {
        inner
    }
}

/// Default end margin for caliber measurement: the typical radius plus two
/// voxels, so rounded caps are not counted as cross-section.
pub fn end_margin(c: &Centerline) -> f64 {
    let mut r: Vec<f64> = c.radii().to_vec();
    r.sort_by(f64::total_cmp);
    r.get(r.len() / 2).copied().unwrap_or(1.0).ceil() + 2.0
}

/// Trims the first and last node of a span (boundary slabs are only half
/// inside the edited region) and drops centerline endpoints.
pub fn measurement_nodes(c: &Centerline, span: &[usize]) -> Vec<usize> {
    let mut nodes: Vec<usize> = span.iter().copied().filter(|i| !c.endpoints().contains(i)).collect();
    if nodes.len() >= 3 {
        nodes.remove(0);
        nodes.pop();
    }
    nodes
}

/// Main path as a polyline with `trim[0]` of arc length cut from its
/// proximal end and `trim[1]` from its distal end: the axis of a tube whose
/// rounded caps have those radii. A path shorter than both trims collapses
/// to a single point.
pub fn core_axis(c: &Centerline, trim: [f64; 2]) -> Vec<Vec3> {
    let pts: Vec<Vec3> = c.main_path().iter().map(|&i| c.nodes()[i]).collect();
    let total = geometry::path_length(&pts);
    let [t0, t1] = trim.map(|t| t.max(0.0));
    let at = |s: f64| -> Vec3 {
        let mut acc = 0.0;
        for w in pts.windows(2) {
            let d = geometry::dist(w[0], w[1]);
            if acc + d >= s && d > 0.0 {
                return geometry::lerp(w[0], w[1], (s - acc) / d);
            }
            acc += d;
        }
        *pts.last().unwrap()
    };
    if pts.len() < 2 || total <= t0 + t1 {
        return vec![at(total * t0 / (t0 + t1).max(1e-9))];
    }
    let (lo, hi) = (t0, total - t1);
    let mut out = vec![at(lo)];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += geometry::dist(w[0], w[1]);
        if acc > lo && acc < hi {
            out.push(w[1]);
        }
    }
    out.push(at(hi));
    out
}

/// Cap radius to trim at each end of the main path: `radius` at a free tip,
/// zero where the tip abuts another labeled structure (the vessel continues
/// into it, so there is no rounded cap).
pub fn cap_trims(v: &LabelVolume, c: &Centerline, radius: f64) -> [f64; 2] {
    let path = c.main_path();
    let g = v.grid();
    let class = c.segment_id();
    let abuts = |p: Vec3| {
        let reach = ABUT_REACH.ceil() as i64;
        let base = p.map(|x| x.round() as i64);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let q = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if geometry::dist(q.map(|x| x as f64), p) > ABUT_REACH {
                        continue;
                    }
                    if let Some(i) = g.checked_index(q) {
                        let l = v.labels()[i];
                        if l != BACKGROUND && l != class {
                            return true;
                        }
                    }
                }
            }
        }
        false
    };
    let ends = [path[0], *path.last().unwrap()];
    ends.map(|e| if abuts(c.nodes()[e]) { 0.0 } else { radius })
}

const ABUT_REACH: f64 = 2.0;

/// Distance from `p` to a polyline.
pub fn polyline_distance(poly: &[Vec3], p: Vec3) -> f64 {
    if poly.len() == 1 {
        return geometry::dist(poly[0], p);
    }
    poly.windows(2)
        .map(|w| {
            let ab = geometry::sub(w[1], w[0]);
            let len2 = geometry::dot(ab, ab);
            let t = if len2 > 0.0 {
                (geometry::dot(geometry::sub(p, w[0]), ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            geometry::dist(geometry::add(w[0], geometry::scale(ab, t)), p)
        })
        .fold(f64::INFINITY, f64::min)
}

/// A voxel that an edit may flip: ordering key, linear index, and whether
/// its nearest node is a measurement node.
type Candidate = (f64, usize, bool);

/// Number of leading candidates (whole key groups only) whose flip brings the
/// measured caliber closest to `target`. Shrinking never empties the
/// measured set.
fn best_prefix(cands: &[Candidate], base: usize, grow: bool, length: f64, target: f64) -> usize {
    let cal = |count: isize| (count.max(0) as f64 / (std::f64::consts::PI * length)).sqrt();
    let mut count = base as isize;
    let mut best = (0, (cal(count) - target).abs());
    let mut k = 0;
    while k < cands.len() {
        let key = cands[k].0;
        let mut next = count;
        let mut j = k;
        while j < cands.len() && cands[j].0 == key {
            if cands[j].2 {
                next += if grow { 1 } else { -1 };
            }
            j += 1;
        }
        if !grow && next <= 0 {
            break;
        }
        count = next;
        k = j;
        let err = (cal(count) - target).abs();
        if err < best.1 - 1e-12 {
            best = (k, err);
        }
    }
    best.0
}

fn measured_length(c: &Centerline, measure: &[usize]) -> f64 {
    measure.iter().map(|&i| c.node_spacing(i)).sum::<f64>().max(1e-9)
}

fn member_flags(c: &Centerline, measure: &[usize]) -> Vec<bool> {
    let mut member = vec![false; c.len()];
    for &i in measure {
        member[i] = true;
    }
    member
}

/// Grows segment `c.segment_id()` into background voxels (inside `region`
/// when given), nearest to the core axis first, until its caliber over
/// `measure` is closest to `target`. Other classes are never overwritten.
pub fn grow_to_caliber(
    v: &LabelVolume,
    c: &Centerline,
    measure: &[usize],
    region: Option<&BinaryMask>,
    target: f64,
) -> Result<CaliberEdit> {
    let class = c.segment_id();
    let seg = v.class_mask(class)?;
    let before = caliber(&seg, c, measure);
    let unchanged = || CaliberEdit {
        volume: v.clone(),
        before,
        after: before,
        level: 0.0,
    };
    let Some(bb) = seg.bounding_box() else {
        return Ok(unchanged());
    };
    if target <= before || measure.is_empty() {
        return Ok(unchanged());
    }
    // Candidates lie in a shell around the segment: growth by the caliber
    // difference plus slack for off-center skeletons and lattice effects.
    let pad = (target - before).ceil() as usize + 3;
    let bb = bb.padded(pad, v.dims());
    let crop = seg.crop(&bb);
    let d2 = squared_edt(crop.bits(), crop.dims(), [1.0; 3], false);
    let member = member_flags(c, measure);
    let owner = nearest_node_assignment(c.nodes(), &seg);
    let base = owner.iter().filter(|&&o| member[o]).count();

    let g = v.grid();
    let cg = crop.grid();
    let limit = (pad * pad) as f64;
    let axis = core_axis(c, cap_trims(v, c, before));
    let mut cands: Vec<Candidate> = Vec::new();
    for (k, &d) in d2.iter().enumerate() {
        if d <= 0.0 || d > limit {
            continue;
        }
        let cc = cg.coords(k);
        let full = [cc[0] + bb.lo[0], cc[1] + bb.lo[1], cc[2] + bb.lo[2]];
        let j = g.index(full[0], full[1], full[2]);
        if v.labels()[j] != BACKGROUND || region.is_some_and(|r| !r.get_index(j)) {
            continue;
        }
        let p = geometry::to_f64(full);
        let o = nearest_node_index(c.nodes(), p);
        cands.push((polyline_distance(&axis, p), j, member[o]));
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = best_prefix(&cands, base, true, measured_length(c, measure), target);
    let mut add = BinaryMask::empty(v.dims(), v.spacing());
    for &(_, j, _) in &cands[..n] {
        add.set_index(j, true);
    }
    let mut out = v.clone();
    out.paint_background(class, &add)?;
    let after = caliber(&out.class_mask(class)?, c, measure);
    Ok(CaliberEdit {
        volume: out,
        before,
        after,
        level: if n > 0 { cands[n - 1].0 } else { 0.0 },
    })
}

/// Peels segment voxels (inside `region` when given), farthest from the
/// core axis first, until the caliber over `measure` is closest to
/// `target`. At least one measured voxel always survives.
pub fn shrink_to_caliber(
    v: &LabelVolume,
    c: &Centerline,
    measure: &[usize],
    region: Option<&BinaryMask>,
    target: f64,
) -> Result<CaliberEdit> {
    let class = c.segment_id();
    let seg = v.class_mask(class)?;
    let before = caliber(&seg, c, measure);
    if target >= before || measure.is_empty() || seg.is_empty() {
        return Ok(CaliberEdit {
            volume: v.clone(),
            before,
            after: before,
            level: 0.0,
        });
    }
    let member = member_flags(c, measure);
    let owner = nearest_node_assignment(c.nodes(), &seg);
    let base = owner.iter().filter(|&&o| member[o]).count();
    let g = v.grid();
    let axis = core_axis(c, cap_trims(v, c, before));
    let mut cands: Vec<Candidate> = Vec::new();
    for (j, &o) in seg.indices().zip(&owner) {
        if region.is_some_and(|r| !r.get_index(j)) {
            continue;
        }
        let p = geometry::to_f64(g.coords(j));
        cands.push((polyline_distance(&axis, p), j, member[o]));
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let n = best_prefix(&cands, base, false, measured_length(c, measure), target);
    let mut drop = BinaryMask::empty(v.dims(), v.spacing());
    for &(_, j, _) in &cands[..n] {
        drop.set_index(j, true);
    }
    let mut out = v.clone();
    out.clear_class(class, &drop)?;
    let after = caliber(&out.class_mask(class)?, c, measure);
    Ok(CaliberEdit {
        volume: out,
        before,
        after,
        level: if n > 0 { cands[n - 1].0 } else { 0.0 },
    })
}
