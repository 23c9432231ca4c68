//! Vessel centerlines as unit-weight graphs with geodesic parameterization.

mod graph;
mod skeleton;
mod span;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Vec3};
use crate::volume::{distance_transform, BinaryMask, LabelVolume, VolumeError};

pub use graph::{refine_centerline, resample as resample_polyline, RefineConfig};
pub use skeleton::skeletonize;
pub use span::{
    caliber, nearest_node_assignment, nearest_node_index, select_span, span_mask, span_mask_with, span_region, Anchor,
    SpanConfig, SpanSelection,
};

#[derive(Debug, Error)]
pub enum CenterlineError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("degenerate centerline: {0}")]
    Degenerate(String),
    #[error("not tubular: {0}")]
    NotTubular(String),
    #[error("invalid span {lo}..{hi}: need 0 <= lo < hi <= 100")]
    InvalidSpan { lo: f64, hi: f64 },
    #[error("empty span {lo}%..{hi}%: no centerline node in range")]
    EmptySpan { lo: f64, hi: f64 },
    #[error("span misses mask")]
    SpanMissesMask,
    #[error("point {0:?} lies outside the mask")]
    PointOutsideMask(Vec3),
    #[error("node index {0} out of range")]
    BadNode(usize),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T, E = CenterlineError> = std::result::Result<T, E>;

/// Segment -> anatomical parent classes. The proximal endpoint of a segment
/// is the endpoint nearest any voxel of its parents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximalTable {
    pub parents: BTreeMap<u8, Vec<u8>>,
}

impl Default for ProximalTable {
    fn default() -> Self {
        let parents = [
            (2, vec![1]),
            (3, vec![1]),
            (5, vec![4]),
            (7, vec![6]),
            (8, vec![4]),
            (9, vec![6]),
            (10, vec![11, 12]),
            (11, vec![4]),
            (12, vec![6]),
            (15, vec![10]),
        ]
        .into_iter()
        .collect();
        Self { parents }
    }
}

/// JSON interchange form, in voxel coordinates of the associated volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterlineJson {
    pub segment_id: u8,
    pub nodes: Vec<Vec3>,
    pub edges: Vec<[usize; 2]>,
    pub proximal: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centerline {
    segment_id: u8,
    nodes: Vec<Vec3>,
    edges: Vec<[usize; 2]>,
    adjacency: Vec<Vec<usize>>,
    endpoints: Vec<usize>,
    proximal: usize,
    distal: usize,
    fractions: Vec<f64>,
    fractions_distal: Vec<f64>,
    tangents: Vec<Vec3>,
    radii: Vec<f64>,
}

fn bfs_hops(adjacency: &[Vec<usize>], from: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; adjacency.len()];
    d[from] = Some(0);
    let mut q = VecDeque::from([from]);
    while let Some(i) = q.pop_front() {
        let di = d[i].unwrap();
        for &j in &adjacency[i] {
            if d[j].is_none() {
                d[j] = Some(di + 1);
                q.push_back(j);
            }
        }
    }
    d
}

impl Centerline {
    /// Builds a centerline from an explicit graph. Radii are sampled from the
    /// distance transform of `mask`.
    pub fn from_graph(
        segment_id: u8,
        nodes: Vec<Vec3>,
        edges: Vec<[usize; 2]>,
        proximal: Option<usize>,
        mask: &BinaryMask,
    ) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(CenterlineError::Degenerate("fewer than two nodes".into()));
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &[a, b] in &edges {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(CenterlineError::BadNode(a.max(b)));
            }
            if a != b && !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let endpoints: Vec<usize> = (0..nodes.len()).filter(|&i| adjacency[i].len() == 1).collect();
        if endpoints.len() < 2 {
            return Err(CenterlineError::Degenerate(format!(
                "{} endpoints, need at least 2",
                endpoints.len()
            )));
        }
        let proximal = match proximal {
            Some(p) if endpoints.contains(&p) => p,
            Some(p) => return Err(CenterlineError::Degenerate(format!("proximal node {p} is not an endpoint"))),
            None => inferior_endpoint(&nodes, &endpoints),
        };
        let radii = sample_radii(&nodes, mask);
        let mut c = Self {
            segment_id,
            nodes,
            edges,
            adjacency,
            endpoints,
            proximal,
            distal: proximal,
            fractions: Vec::new(),
            fractions_distal: Vec::new(),
            tangents: Vec::new(),
            radii,
        };
        c.parameterize()?;
        Ok(c)
    }

    /// Ordered path through `nodes` (edges between consecutive points).
    pub fn from_path(segment_id: u8, nodes: Vec<Vec3>, proximal_first: bool, mask: &BinaryMask) -> Result<Self> {
        let n = nodes.len();
        let edges = (1..n).map(|i| [i - 1, i]).collect();
        let proximal = n.checked_sub(1).map(|last| if proximal_first { 0 } else { last });
        Self::from_graph(segment_id, nodes, edges, proximal, mask)
    }

    fn parameterize(&mut self) -> Result<()> {
        let hops = bfs_hops(&self.adjacency, self.proximal);
        if hops.iter().any(Option::is_none) {
            return Err(CenterlineError::Degenerate("graph is not connected".into()));
        }
        let hops: Vec<usize> = hops.into_iter().map(Option::unwrap).collect();
        // Farthest endpoint (lowest index on ties) is the distal anchor.
        self.distal = *self
            .endpoints
            .iter()
            .filter(|&&e| e != self.proximal)
            .max_by(|&&a, &&b| hops[a].cmp(&hops[b]).then(b.cmp(&a)))
            .unwrap();
        let total = hops[self.distal].max(1) as f64;
        self.fractions = hops.iter().map(|&h| (h as f64 / total).min(1.0)).collect();
        let back: Vec<usize> = bfs_hops(&self.adjacency, self.distal)
            .into_iter()
            .map(Option::unwrap)
            .collect();
        let total_back = back[self.proximal].max(1) as f64;
        self.fractions_distal = back.iter().map(|&h| (h as f64 / total_back).min(1.0)).collect();
        self.tangents = (0..self.nodes.len()).map(|i| self.compute_tangent(i)).collect();
        Ok(())
    }

    fn compute_tangent(&self, i: usize) -> Vec3 {
        let f = self.fractions[i];
        let adj = &self.adjacency[i];
        let prev = adj
            .iter()
            .copied()
            .filter(|&j| self.fractions[j] < f)
            .min_by(|&a, &b| self.fractions[a].total_cmp(&self.fractions[b]));
        let next = adj
            .iter()
            .copied()
            .filter(|&j| self.fractions[j] > f)
            .max_by(|&a, &b| self.fractions[a].total_cmp(&self.fractions[b]));
        let d = match (prev, next) {
            (Some(p), Some(n)) => geometry::sub(self.nodes[n], self.nodes[p]),
            (None, Some(n)) => geometry::sub(self.nodes[n], self.nodes[i]),
            (Some(p), None) => geometry::sub(self.nodes[i], self.nodes[p]),
            (None, None) => [0.0; 3],
        };
        geometry::normalize(d).unwrap_or([0.0, 0.0, 1.0])
    }

    /// Re-anchors the proximal end using the parent table: the endpoint
    /// nearest any voxel of a parent segment present in `v`. Without a parent
    /// the most inferior endpoint (lowest z, then lowest index) is used.
    pub fn anchored(mut self, v: &LabelVolume, table: &ProximalTable) -> Self {
        let parents = table.parents.get(&self.segment_id).cloned().unwrap_or_default();
        let parent_mask = v.mask_where(|l| l != 0 && parents.contains(&l));
        let proximal = if parent_mask.is_empty() {
            inferior_endpoint(&self.nodes, &self.endpoints)
        } else {
            let d = crate::volume::distance_to_set_mm(&parent_mask);
            let g = parent_mask.grid();
            let score = |e: usize| {
                g.nearest_index(self.nodes[e]).map_or(f64::INFINITY, |i| d[i])
            };
            *self
                .endpoints
                .iter()
                .min_by(|&&a, &&b| score(a).total_cmp(&score(b)).then(a.cmp(&b)))
                .unwrap()
        };
        if proximal != self.proximal {
            self.proximal = proximal;
            self.parameterize().expect("graph already validated");
        }
        self
    }

    pub fn with_segment_id(mut self, segment_id: u8) -> Self {
        self.segment_id = segment_id;
        self
    }

    pub fn segment_id(&self) -> u8 {
        self.segment_id
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn endpoints(&self) -> &[usize] {
        &self.endpoints
    }

    pub fn proximal(&self) -> usize {
        self.proximal
    }

    pub fn distal(&self) -> usize {
        self.distal
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Geodesic fractions measured from the proximal endpoint.
    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Geodesic fractions measured from `anchor`.
    pub fn fractions_from(&self, anchor: Anchor) -> &[f64] {
        match anchor {
            Anchor::Proximal => &self.fractions,
            Anchor::Distal => &self.fractions_distal,
        }
    }

    pub fn tangents(&self) -> &[Vec3] {
        &self.tangents
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Endpoint at the given anchor.
    pub fn anchor_node(&self, anchor: Anchor) -> usize {
        match anchor {
            Anchor::Proximal => self.proximal,
            Anchor::Distal => self.distal,
        }
    }

    /// Euclidean length along the graph edges.
    pub fn length(&self) -> f64 {
        self.edges
            .iter()
            .map(|&[a, b]| geometry::dist(self.nodes[a], self.nodes[b]))
            .sum()
    }

    /// Mean length of the edges incident to node `i`.
    pub fn node_spacing(&self, i: usize) -> f64 {
        let s: f64 = self.adjacency[i]
            .iter()
            .map(|&j| geometry::dist(self.nodes[i], self.nodes[j]))
            .sum();
        if self.adjacency[i].len() >= 2 {
            s / self.adjacency[i].len() as f64
        } else {
            s
        }
    }

    /// Node indices ordered from the proximal to the distal end along the
    /// shortest path between them.
    pub fn main_path(&self) -> Vec<usize> {
        let mut prev = vec![usize::MAX; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        seen[self.proximal] = true;
        let mut q = VecDeque::from([self.proximal]);
        while let Some(i) = q.pop_front() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    prev[j] = i;
                    q.push_back(j);
                }
            }
        }
        let mut path = vec![self.distal];
        while *path.last().unwrap() != self.proximal {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();
        path
    }

    pub fn to_json(&self) -> CenterlineJson {
        CenterlineJson {
            segment_id: self.segment_id,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            proximal: self.proximal,
        }
    }

    /// Rebuilds a centerline from its interchange form against the segment
    /// mask of `v`.
    pub fn from_json(json: &CenterlineJson, v: &LabelVolume) -> Result<Self> {
        let mask = v.class_mask(json.segment_id)?;
        Self::from_graph(
            json.segment_id,
            json.nodes.clone(),
            json.edges.clone(),
            Some(json.proximal),
            &mask,
        )
    }
}

fn inferior_endpoint(nodes: &[Vec3], endpoints: &[usize]) -> usize {
    *endpoints
        .iter()
        .min_by(|&&a, &&b| nodes[a][2].total_cmp(&nodes[b][2]).then(a.cmp(&b)))
        .unwrap()
}

fn sample_radii(nodes: &[Vec3], mask: &BinaryMask) -> Vec<f64> {
    let Some(bb) = mask.bounding_box() else {
        return vec![0.0; nodes.len()];
    };
    let bb = bb.padded(1, mask.dims());
    let crop = mask.crop(&bb);
    let dt = distance_transform(&crop);
    let g = crop.grid();
    let o = bb.origin();
    nodes
        .iter()
        .map(|p| {
            let local = geometry::sub(*p, o);
            let c = [local[0].round() as i64, local[1].round() as i64, local[2].round() as i64];
            let mut best = 0.0f64;
            if let Some(i) = g.checked_index(c) {
                if crop.get_index(i) {
                    return dt[i];
                }
            }
            // Off-mask node: fall back to the best in-mask neighbor.
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if let Some(i) = g.checked_index([c[0] + dx, c[1] + dy, c[2] + dz]) {
                            if crop.get_index(i) {
                                best = best.max(dt[i]);
                            }
                        }
                    }
                }
            }
            best
        })
        .collect()
}

/// Local vessel radius in voxels: the distance-transform value at the voxel
/// nearest `point`.
pub fn estimate_radius(mask: &BinaryMask, point: Vec3) -> Result<f64> {
    let g = mask.grid();
    match g.nearest_index(point) {
        Some(i) if mask.get_index(i) => Ok(sample_radii(&[point], mask)[0]),
        _ => Err(CenterlineError::PointOutsideMask(point)),
    }
}

/// Unit tangent at node `i`, pointing toward increasing proximal fraction.
pub fn local_tangent(c: &Centerline, i: usize) -> Result<Vec3> {
    c.tangents.get(i).copied().ok_or(CenterlineError::BadNode(i))
}
