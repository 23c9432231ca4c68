//! Distance-ridge skeletonization of a single tubular component.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::graph::resample;
use super::{Centerline, CenterlineError, Result};
use crate::geometry::{self, Vec3};
use crate::volume::{connected_components, distance_transform, BinaryMask, Connectivity};

const STEP_LEN: [f64; 4] = [0.0, 1.0, std::f64::consts::SQRT_2, 1.732_050_807_568_877_2];

fn neighbors26() -> impl Iterator<Item = ([i64; 3], f64)> {
    (-1..=1).flat_map(move |dz: i64| {
        (-1..=1).flat_map(move |dy: i64| {
            (-1..=1).filter_map(move |dx: i64| {
                let k = (dx.abs() + dy.abs() + dz.abs()) as usize;
                (k > 0).then_some(([dx, dy, dz], STEP_LEN[k]))
            })
        })
    })
}

/// Dijkstra over set voxels of `m`; `cost(i, step)` prices entering voxel `i`.
fn dijkstra(m: &BinaryMask, from: usize, cost: impl Fn(usize, f64) -> f64) -> (Vec<f64>, Vec<usize>) {
    let g = m.grid();
    let steps: Vec<([i64; 3], f64)> = neighbors26().collect();
    let mut dist = vec![f64::INFINITY; m.len()];
    let mut prev = vec![usize::MAX; m.len()];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Reverse((0f64.to_bits(), from)));
    while let Some(Reverse((bits, i))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[i] {
            continue;
        }
        let c = g.coords(i);
        for &(o, len) in &steps {
            let Some(j) = g.checked_index([c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]]) else {
                continue;
            };
            if !m.get_index(j) {
                continue;
            }
            let nd = d + cost(j, len);
            if nd < dist[j] {
                dist[j] = nd;
                prev[j] = i;
                heap.push(Reverse((nd.to_bits(), j)));
            }
        }
    }
    (dist, prev)
}

fn argmax_finite(v: &[f64]) -> usize {
    let mut best = 0;
    let mut bv = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x.is_finite() && x > bv {
            bv = x;
            best = i;
        }
    }
    best
}

/// Centerline of a tubular mask: from the deepest voxel, two farthest-point
/// geodesic sweeps find the tips; the ridge-weighted shortest path between
/// them is trimmed where it leaves the ridge, extended along its end tangents
/// to the mask boundary, resampled at unit spacing and recentered on the
/// cross-section centroids.
///
/// Masks with several components are reduced to the largest one.
pub fn skeletonize(mask: &BinaryMask) -> Result<Centerline> {
    let bb = mask.bounding_box().ok_or(CenterlineError::EmptyMask)?;
    let bb = bb.padded(1, mask.dims());
    let mut crop = mask.crop(&bb);
    let comps = connected_components(&crop, Connectivity::TwentySix);
    if comps.len() > 1 {
        crop = comps.into_iter().max_by_key(|c| c.count()).unwrap();
    }
    let component = crop.uncrop(&bb, mask.dims());
    let mask = &component;
    let g = crop.grid();
    let dt = distance_transform(&crop);
    let seed = argmax_finite(&dt);
    let dt_max = dt[seed];

    let (d0, _) = dijkstra(&crop, seed, |_, len| len);
    let a = argmax_finite(&d0);
    let (d1, _) = dijkstra(&crop, a, |_, len| len);
    let b = argmax_finite(&d1);
    let span = d1[b];
    if a == b || span < 2.0 * dt_max + 1.0 {
        return Err(CenterlineError::NotTubular(format!(
            "geodesic extent {span:.1} is too short for depth {dt_max:.1}"
        )));
    }

    let (_, prev) = dijkstra(&crop, a, |j, len| len / (dt[j] * dt[j]));
    let mut path = vec![b];
    while *path.last().unwrap() != a {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();

    // Trim the approach from the tips until the path reaches ridge depth.
    let mut depths: Vec<f64> = path.iter().map(|&i| dt[i]).collect();
    depths.sort_by(f64::total_cmp);
    // Trimming never reaches past a cap's depth, so a stretch that is merely
    // shallower than the median (a thinner or lattice-diagonal leg) stays.
    let ridge = 0.9 * depths[depths.len() / 2];
    let mut arc = vec![0.0; path.len()];
    for k in 1..path.len() {
        arc[k] = arc[k - 1] + geometry::dist(geometry::to_f64(g.coords(path[k - 1])), geometry::to_f64(g.coords(path[k])));
    }
    let reach = 2.0 * dt_max + 2.0;
    let total = arc[path.len() - 1];
    let lo = path
        .iter()
        .zip(&arc)
        .position(|(&i, &s)| dt[i] >= ridge || s >= reach)
        .unwrap_or(0);
    let hi = path
        .iter()
        .zip(&arc)
        .rposition(|(&i, &s)| dt[i] >= ridge || total - s >= reach)
        .unwrap_or(path.len() - 1);
    let core: Vec<usize> = if hi > lo { path[lo..=hi].to_vec() } else { path.clone() };

    let origin = bb.origin();
    let to_world = |i: usize| geometry::add(geometry::to_f64(g.coords(i)), origin);
    let poly: Vec<Vec3> = core.iter().map(|&i| to_world(i)).collect();
    if poly.len() < 2 {
        return Err(CenterlineError::NotTubular("ridge path has a single voxel".into()));
    }
    // Recenter on a coarse chain so every cross-section cell is a slab
    // about one radius thick; thin cells pick up lattice noise. Tips are
    // placed afterwards, along the recentered end directions.
    let step = dt_max.clamp(2.0, 6.0);
    let mut coarse = resample(&poly, step);
    for _ in 0..RECENTER_PASSES {
        smooth(&mut coarse, mask);
        recenter(&mut coarse, mask);
    }
    let poly = resample(&coarse, 1.0);
    let head = extension(&poly, mask, true);
    let tail = extension(&poly, mask, false);
    let mut full: Vec<Vec3> = head.into_iter().rev().collect();
    full.extend_from_slice(&poly);
    full.extend(tail);
    let nodes = resample(&full, 1.0);
    let proximal_first = nodes[0][2] <= nodes[nodes.len() - 1][2];
    Centerline::from_path(0, nodes, proximal_first, mask)
}

/// Points beyond one end of `poly`, stepping along the end direction while
/// still inside `mask`.
fn extension(poly: &[Vec3], mask: &BinaryMask, at_start: bool) -> Vec<Vec3> {
    let n = poly.len();
    let k = 5.min(n - 1);
    let (end, inner) = if at_start { (poly[0], poly[k]) } else { (poly[n - 1], poly[n - 1 - k]) };
    let Some(dir) = geometry::normalize(geometry::sub(end, inner)) else {
        return Vec::new();
    };
    let g = mask.grid();
    let mut out = Vec::new();
    let mut t = 0.5;
    let mut last_in = None;
    loop {
        let p = geometry::add(end, geometry::scale(dir, t));
        match g.nearest_index(p) {
            Some(i) if mask.get_index(i) => last_in = Some(t),
            _ => break,
        }
        t += 0.5;
    }
    if let Some(tmax) = last_in {
        let mut s = 1.0;
        while s < tmax {
            out.push(geometry::add(end, geometry::scale(dir, s)));
            s += 1.0;
        }
        out.push(geometry::add(end, geometry::scale(dir, tmax)));
    }
    out
}

/// Damps the zigzag mode that cross-section recentering can amplify in wide
/// stretches. Nodes that would leave the mask stay put.
fn smooth(nodes: &mut [Vec3], mask: &BinaryMask) {
    let src = nodes.to_vec();
    let g = mask.grid();
    for i in 1..src.len().saturating_sub(1) {
        let p = geometry::scale(geometry::add(geometry::add(src[i - 1], src[i + 1]), geometry::scale(src[i], 2.0)), 0.25);
        if g.nearest_index(p).is_some_and(|j| mask.get_index(j)) {
            nodes[i] = p;
        }
    }
}

const RECENTER_PASSES: usize = 3;

/// Moves every node to the centroid of its cross-section: the mask voxels
/// nearest to it that also lie within half a node spacing of the plane
/// through it perpendicular to the chain. Cells cut this way stay
/// symmetric where the vessel widens, which plain nearest-node cells do not.
fn recenter(nodes: &mut [Vec3], mask: &BinaryMask) {
    let n = nodes.len();
    if n < 3 {
        return;
    }
    let src = nodes.to_vec();
    let tangent = |i: usize| {
        let (a, b) = (src[i.saturating_sub(1)], src[(i + 1).min(n - 1)]);
        geometry::normalize(geometry::sub(b, a)).unwrap_or([0.0, 0.0, 1.0])
    };
    let half = |i: usize| {
        let prev = if i > 0 { geometry::dist(src[i], src[i - 1]) } else { 0.0 };
        let next = if i + 1 < n { geometry::dist(src[i], src[i + 1]) } else { 0.0 };
        0.5 * prev.max(next)
    };
    let frames: Vec<(Vec3, f64)> = (0..n).map(|i| (tangent(i), half(i))).collect();
    let g = mask.grid();
    let owner = super::nearest_node_assignment(&src, mask);
    let mut sums = vec![([0.0; 3], 0usize); n];
    for (idx, &o) in mask.indices().zip(&owner) {
        let p = geometry::to_f64(g.coords(idx));
        let (t, h) = frames[o];
        if geometry::dot(geometry::sub(p, src[o]), t).abs() > h {
            continue;
        }
        let (s, k) = &mut sums[o];
        *s = geometry::add(*s, p);
        *k += 1;
    }
    for (i, (s, k)) in sums.into_iter().enumerate() {
        if k == 0 {
            continue;
        }
        let mut c = geometry::scale(s, 1.0 / k as f64);
        // Only the sideways shift counts; spacing along the chain is kept.
        let t = frames[i].0;
        let d = geometry::sub(c, src[i]);
        c = geometry::sub(c, geometry::scale(t, geometry::dot(d, t)));
        if g.nearest_index(c).is_some_and(|j| mask.get_index(j)) {
            nodes[i] = c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::stamp_tube;

    #[test]
    fn single_voxel_is_not_tubular() {
        let mut m = BinaryMask::empty([5, 5, 5], [1.0; 3]);
        m.set(2, 2, 2, true);
        assert!(matches!(skeletonize(&m), Err(CenterlineError::NotTubular(_))));
    }

    #[test]
    fn straight_tube_axis() {
        let m = stamp_tube([50, 13, 13], [1.0; 3], &[[5.0, 6.0, 6.0], [44.0, 6.0, 6.0]], &[3.0, 3.0]);
        let c = skeletonize(&m).unwrap();
        for p in c.nodes() {
            let off = ((p[1] - 6.0).powi(2) + (p[2] - 6.0).powi(2)).sqrt();
            assert!(off <= 1.0, "{p:?}");
        }
        assert_eq!(c.endpoints().len(), 2);
    }
}
