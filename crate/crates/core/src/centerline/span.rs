//! Percentile span selection and cylinder-union span masks.

use serde::{Deserialize, Serialize};

use super::{Centerline, CenterlineError, Result};
use crate::geometry::{self, Vec3};
use crate::volume::{BinaryMask, Dims, Grid, LabelVolume, Spacing};

/// Endpoint from which percentages are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    #[default]
    Proximal,
    Distal,
}

impl Anchor {
    pub fn as_str(self) -> &'static str {
        match self {
            Anchor::Proximal => "proximal",
            Anchor::Distal => "distal",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Anchor::Proximal => Anchor::Distal,
            Anchor::Distal => Anchor::Proximal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanConfig {
    /// Cylinder radius as a multiple of the local node radius.
    pub radius_margin: f64,
    /// Cylinder half-height as a multiple of the local node spacing.
    pub height_margin: f64,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self {
            radius_margin: 1.5,
            height_margin: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanSelection {
    pub segment_id: u8,
    pub p_lo: f64,
    pub p_hi: f64,
    pub anchor: Anchor,
    pub node_indices: Vec<usize>,
    pub mask: BinaryMask,
}

impl SpanSelection {
    /// Selects the span and builds its mask with default margins.
    pub fn new(v: &LabelVolume, c: &Centerline, p_lo: f64, p_hi: f64, anchor: Anchor) -> Result<Self> {
        let node_indices = select_span(c, p_lo, p_hi, anchor)?;
        let mask = span_mask(v, c, &node_indices, SpanConfig::default().radius_margin)?;
        Ok(Self {
            segment_id: c.segment_id(),
            p_lo,
            p_hi,
            anchor,
            node_indices,
            mask,
        })
    }
}

/// Nodes whose geodesic fraction from `anchor` lies in `[p_lo, p_hi]` percent
/// (inclusive), in ascending index order.
pub fn select_span(c: &Centerline, p_lo: f64, p_hi: f64, anchor: Anchor) -> Result<Vec<usize>> {
    if !(p_lo.is_finite() && p_hi.is_finite() && 0.0 <= p_lo && p_lo < p_hi && p_hi <= 100.0) {
        return Err(CenterlineError::InvalidSpan { lo: p_lo, hi: p_hi });
    }
    let (lo, hi) = (p_lo / 100.0 - 1e-9, p_hi / 100.0 + 1e-9);
    let nodes: Vec<usize> = c
        .fractions_from(anchor)
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= lo && f <= hi)
        .map(|(i, _)| i)
        .collect();
    if nodes.is_empty() {
        return Err(CenterlineError::EmptySpan { lo: p_lo, hi: p_hi });
    }
    Ok(nodes)
}

/// Union of finite cylinders around `nodes` (axis = node tangent, radius from
/// `radius_of`, half-height = node spacing x `height_margin`). Centerline
/// endpoints get a half-height of at least their radius so rounded caps are
/// covered.
pub fn span_region(
    dims: Dims,
    spacing: Spacing,
    c: &Centerline,
    nodes: &[usize],
    radius_of: impl Fn(usize) -> f64,
    height_margin: f64,
) -> BinaryMask {
    let mut out = BinaryMask::empty(dims, spacing);
    let g = Grid::new(dims);
    for &i in nodes {
        let p = c.nodes()[i];
        let t = c.tangents()[i];
        let rho = radius_of(i).max(0.5);
        let mut h = c.node_spacing(i).max(1e-6) * height_margin;
        if c.endpoints().contains(&i) {
            h = h.max(rho);
        }
        let reach = (h * h + rho * rho).sqrt();
        let lo: Vec<i64> = (0..3).map(|a| (p[a] - reach).ceil().max(0.0) as i64).collect();
        let hi: Vec<i64> = (0..3)
            .map(|a| (p[a] + reach).floor().min(dims[a] as f64 - 1.0) as i64)
            .collect();
        let (h2, r2) = (h + 1e-9, rho * rho + 1e-9);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let w = geometry::sub([x as f64, y as f64, z as f64], p);
                    let a = geometry::dot(w, t);
                    if a.abs() <= h2 && geometry::dot(w, w) - a * a <= r2 {
                        out.set_index(g.index(x as usize, y as usize, z as usize), true);
                    }
                }
            }
        }
    }
    out
}

/// Cylinder union over the span nodes (radius = node radius x
/// `radius_margin`, default half-height margin), clipped to the segment.
pub fn span_mask(v: &LabelVolume, c: &Centerline, span: &[usize], radius_margin: f64) -> Result<BinaryMask> {
    let cfg = SpanConfig {
        radius_margin,
        ..SpanConfig::default()
    };
    span_mask_with(v, c, span, &cfg)
}

pub fn span_mask_with(v: &LabelVolume, c: &Centerline, span: &[usize], cfg: &SpanConfig) -> Result<BinaryMask> {
    if span.is_empty() {
        return Err(CenterlineError::EmptySpan { lo: 0.0, hi: 0.0 });
    }
    let seg = v.class_mask(c.segment_id())?;
    let region = span_region(
        v.dims(),
        v.spacing(),
        c,
        span,
        |i| c.radii()[i] * cfg.radius_margin,
        cfg.height_margin,
    );
    let m = region.intersection(&seg);
    if m.is_empty() {
        return Err(CenterlineError::SpanMissesMask);
    }
    Ok(m)
}

/// For every set voxel of `mask` (ascending linear index), the index of the
/// nearest node (lowest index on ties).
pub fn nearest_node_assignment(nodes: &[Vec3], mask: &BinaryMask) -> Vec<usize> {
    let g = mask.grid();
    mask.indices()
        .map(|i| nearest_node_index(nodes, geometry::to_f64(g.coords(i))))
        .collect()
}

/// Index of the node nearest to `p` (lowest index on ties).
pub fn nearest_node_index(nodes: &[Vec3], p: Vec3) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (k, n) in nodes.iter().enumerate() {
        let d = geometry::dist2(*n, p);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

/// Area-equivalent radius, in voxels, of the tube around the `nodes` subset:
/// `sqrt(count / (pi * length))`, where `count` is the number of mask voxels
/// whose nearest node is in the subset and `length` the subset's summed node
/// spacing. Returns 0 for an empty subset.
pub fn caliber(mask: &BinaryMask, c: &Centerline, nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let mut member = vec![false; c.len()];
    for &i in nodes {
        member[i] = true;
    }
    let owner = nearest_node_assignment(c.nodes(), mask);
    let count = owner.iter().filter(|&&o| member[o]).count();
    let length: f64 = nodes.iter().map(|&i| c.node_spacing(i)).sum();
    if length <= 0.0 {
        return 0.0;
    }
    (count as f64 / (std::f64::consts::PI * length)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::stamp_tube;

    fn path101() -> (BinaryMask, Centerline) {
        let m = stamp_tube([110, 11, 11], [1.0; 3], &[[4.0, 5.0, 5.0], [104.0, 5.0, 5.0]], &[3.0, 3.0]);
        let nodes = (0..=100).map(|i| [4.0 + i as f64, 5.0, 5.0]).collect();
        (m.clone(), Centerline::from_path(7, nodes, true, &m).unwrap())
    }

    #[test]
    fn span_selection_examples() {
        let (_, c) = path101();
        assert_eq!(select_span(&c, 86.0, 99.0, Anchor::Proximal).unwrap(), (86..=99).collect::<Vec<_>>());
        assert_eq!(select_span(&c, 0.0, 100.0, Anchor::Proximal).unwrap().len(), 101);
        assert_eq!(select_span(&c, 0.0, 10.0, Anchor::Distal).unwrap(), (90..=100).collect::<Vec<_>>());
        assert!(select_span(&c, 50.0, 50.0, Anchor::Proximal).is_err());
    }

    #[test]
    fn caliber_of_straight_tube() {
        let (m, c) = path101();
        let mid: Vec<usize> = (20..80).collect();
        let r = caliber(&m, &c, &mid);
        // Lattice disc of radius 3 has 29 points: sqrt(29 / pi) = 3.04.
        assert!((r - (29.0f64 / std::f64::consts::PI).sqrt()).abs() < 1e-9, "{r}");
    }
}
