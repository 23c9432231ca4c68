//! Raw centerline points -> pruned, resampled, mask-snapped path.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Centerline, CenterlineError, Result};
use crate::geometry::{self, Vec3};
use crate::volume::BinaryMask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Points closer than this (voxels) are joined by an edge.
    pub connect_dist: f64,
    /// Leaf branches with fewer nodes than this are pruned.
    pub spur_len: usize,
    /// Arc-length spacing of the resampled path, in voxels.
    pub step: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            connect_dist: 3f64.sqrt(),
            spur_len: 5,
            step: 1.0,
        }
    }
}

/// Ingests unordered centerline points: joins neighbors, prunes short spurs,
/// keeps the longest path of the largest component, resamples it to uniform
/// spacing and snaps every node into `mask`.
///
/// The returned centerline has segment id 0 and an inferior-most proximal
/// end; callers usually chain [`Centerline::with_segment_id`] and
/// [`Centerline::anchored`].
pub fn refine_centerline(raw_points: &[Vec3], mask: &BinaryMask, cfg: &RefineConfig) -> Result<Centerline> {
    if mask.is_empty() {
        return Err(CenterlineError::EmptyMask);
    }
    if raw_points.is_empty() {
        return Err(CenterlineError::Degenerate("no input points".into()));
    }

    // (A) dedup, keeping first occurrences.
    let mut seen = HashMap::new();
    let mut pts = Vec::new();
    for p in raw_points {
        let key = p.map(f64::to_bits);
        if seen.insert(key, pts.len()).is_none() {
            pts.push(*p);
        }
    }

    // (B) proximity graph.
    let mut adj = proximity_graph(&pts, cfg.connect_dist);

    // (C) spur pruning, then the largest component.
    let alive = prune_spurs(&mut adj, cfg.spur_len);
    let comp = largest_component(&adj, &alive);
    if comp.len() < 2 {
        return Err(CenterlineError::Degenerate("no connected structure after pruning".into()));
    }

    // (D) longest shortest path, oriented to start near the earliest input point.
    let a = farthest(&adj, comp[0]);
    let b = farthest(&adj, a);
    let mut path = path_between(&adj, a, b);
    if path.len() < 2 {
        return Err(CenterlineError::Degenerate("path has a single node".into()));
    }
    if path[0] > *path.last().unwrap() {
        path.reverse();
    }
    let poly: Vec<Vec3> = path.iter().map(|&i| pts[i]).collect();
    let resampled = resample(&poly, cfg.step);

    // (E) snap into the mask.
    let snapped = snap_to_mask(&resampled, mask);
    let mut nodes: Vec<Vec3> = Vec::with_capacity(snapped.len());
    for p in snapped {
        if nodes.last() != Some(&p) {
            nodes.push(p);
        }
    }
    if nodes.len() < 2 {
        return Err(CenterlineError::Degenerate("path collapsed after snapping".into()));
    }
    let proximal_first = nodes[0][2] <= nodes[nodes.len() - 1][2];
    Centerline::from_path(0, nodes, proximal_first, mask)
}

fn proximity_graph(pts: &[Vec3], radius: f64) -> Vec<Vec<usize>> {
    let cell = radius.max(1e-6);
    let key = |p: &Vec3| p.map(|v| (v / cell).floor() as i64);
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let r2 = radius * radius + 1e-9;
    let mut adj = vec![Vec::new(); pts.len()];
    for (i, p) in pts.iter().enumerate() {
        let k = key(p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(bucket) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in bucket {
                            if j != i && geometry::dist2(*p, pts[j]) <= r2 {
                                adj[i].push(j);
                            }
                        }
                    }
                }
            }
        }
        adj[i].sort_unstable();
    }
    adj
}

/// Repeatedly removes leaf branches (leaf up to, not including, a junction)
/// shorter than `spur_len` nodes. Returns the surviving node flags.
fn prune_spurs(adj: &mut [Vec<usize>], spur_len: usize) -> Vec<bool> {
    let n = adj.len();
    let mut alive = vec![true; n];
    loop {
        let mut removed = false;
        for leaf in 0..n {
            if !alive[leaf] || adj[leaf].len() != 1 {
                continue;
            }
            let mut branch = vec![leaf];
            let mut prev = leaf;
            let mut cur = adj[leaf][0];
            while adj[cur].len() == 2 && branch.len() < spur_len {
                branch.push(cur);
                let next = if adj[cur][0] == prev { adj[cur][1] } else { adj[cur][0] };
                prev = cur;
                cur = next;
            }
            if adj[cur].len() >= 3 && branch.len() < spur_len {
                for &b in &branch {
                    alive[b] = false;
                }
                for &b in &branch {
                    for j in std::mem::take(&mut adj[b]) {
                        adj[j].retain(|&k| k != b);
                    }
                }
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    for i in 0..n {
        if adj[i].is_empty() {
            alive[i] = false;
        }
    }
    alive
}

fn largest_component(adj: &[Vec<usize>], alive: &[bool]) -> Vec<usize> {
    let mut comp_of = vec![usize::MAX; adj.len()];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..adj.len() {
        if !alive[s] || comp_of[s] != usize::MAX {
            continue;
        }
        let mut members = vec![s];
        comp_of[s] = s;
        let mut q = VecDeque::from([s]);
        while let Some(i) = q.pop_front() {
            for &j in &adj[i] {
                if comp_of[j] == usize::MAX {
                    comp_of[j] = s;
                    members.push(j);
                    q.push_back(j);
                }
            }
        }
        if members.len() > best.len() {
            members.sort_unstable();
            best = members;
        }
    }
    best
}

fn bfs(adj: &[Vec<usize>], from: usize) -> (Vec<usize>, Vec<usize>) {
    let mut d = vec![usize::MAX; adj.len()];
    let mut prev = vec![usize::MAX; adj.len()];
    d[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(i) = q.pop_front() {
        for &j in &adj[i] {
            if d[j] == usize::MAX {
                d[j] = d[i] + 1;
                prev[j] = i;
                q.push_back(j);
            }
        }
    }
    (d, prev)
}

fn farthest(adj: &[Vec<usize>], from: usize) -> usize {
    let (d, _) = bfs(adj, from);
    let mut best = from;
    for (i, &di) in d.iter().enumerate() {
        if di != usize::MAX && di > d[best] {
            best = i;
        }
    }
    best
}

fn path_between(adj: &[Vec<usize>], a: usize, b: usize) -> Vec<usize> {
    let (_, prev) = bfs(adj, a);
    let mut path = vec![b];
    while *path.last().unwrap() != a {
        let p = prev[*path.last().unwrap()];
        if p == usize::MAX {
            break;
        }
        path.push(p);
    }
    path.reverse();
    path
}

/// Resamples a polyline at uniform arc-length spacing close to `step`,
/// keeping both endpoints.
pub fn resample(poly: &[Vec3], step: f64) -> Vec<Vec3> {
    let total = geometry::path_length(poly);
    if total <= 0.0 {
        return vec![poly[0]];
    }
    let n = ((total / step).round() as usize).max(1);
    let h = total / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(poly[0]);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 1..n {
        let s = k as f64 * h;
        while seg + 1 < poly.len() - 1 && seg_start + geometry::dist(poly[seg], poly[seg + 1]) < s {
            seg_start += geometry::dist(poly[seg], poly[seg + 1]);
            seg += 1;
        }
        let len = geometry::dist(poly[seg], poly[seg + 1]);
        let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(geometry::lerp(poly[seg], poly[seg + 1], t));
    }
    out.push(*poly.last().unwrap());
    out
}

/// Moves every point whose nearest voxel lies outside `mask` to the nearest
/// in-mask voxel center; in-mask points keep their continuous position.
pub(crate) fn snap_to_mask(points: &[Vec3], mask: &BinaryMask) -> Vec<Vec3> {
    let g = mask.grid();
    let mut members: Option<Vec<Vec3>> = None;
    points
        .iter()
        .map(|&p| {
            if g.nearest_index(p).is_some_and(|i| mask.get_index(i)) {
                return p;
            }
            let members = members.get_or_insert_with(|| {
                mask.indices().map(|i| geometry::to_f64(g.coords(i))).collect()
            });
            *members
                .iter()
                .min_by(|a, b| geometry::dist2(**a, p).total_cmp(&geometry::dist2(**b, p)))
                .expect("mask is nonempty")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::stamp_tube;

    #[test]
    fn resample_keeps_ends() {
        let r = resample(&[[0.0, 0.0, 0.0], [2.5, 0.0, 0.0]], 1.0);
        assert_eq!(r.len(), 4);
        assert_eq!(r[0], [0.0, 0.0, 0.0]);
        assert_eq!(r[3], [2.5, 0.0, 0.0]);
    }

    #[test]
    fn snapping_moves_outside_points() {
        let m = stamp_tube([12, 7, 7], [1.0; 3], &[[1.0, 3.0, 3.0], [10.0, 3.0, 3.0]], &[1.0, 1.0]);
        let s = snap_to_mask(&[[5.0, 6.0, 3.0], [5.2, 3.0, 3.0]], &m);
        assert_eq!(s[0], [5.0, 4.0, 3.0]);
        assert_eq!(s[1], [5.2, 3.0, 3.0]);
    }
}
