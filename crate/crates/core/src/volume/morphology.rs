use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{squared_edt, BinaryMask, Result, VolumeError};

/// Discrete Euclidean ball: every integer offset with norm <= radius.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuringElement {
    radius: f64,
    offsets: Vec<[i64; 3]>,
}

impl StructuringElement {
    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(VolumeError::Geometry(format!(
                "structuring element radius must be positive, got {radius}"
            )));
        }
        let r = radius.floor() as i64;
        let r2 = radius * radius;
        let mut offsets = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if ((dx * dx + dy * dy + dz * dz) as f64) <= r2 + 1e-12 {
                        offsets.push([dx, dy, dz]);
                    }
                }
            }
        }
        Ok(Self { radius, offsets })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn offsets(&self) -> &[[i64; 3]] {
        &self.offsets
    }
}

/// Minkowski sum with the element, clipped at the grid bounds.
pub fn dilate(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let g = m.grid();
    let mut out = m.empty_like();
    for i in m.indices() {
        let c = g.coords(i);
        for o in se.offsets() {
            let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
            if let Some(j) = g.checked_index(p) {
                out.set_index(j, true);
            }
        }
    }
    out
}

/// A voxel survives iff every element offset lands inside the mask;
/// out-of-bounds counts as background.
pub fn erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let g = m.grid();
    let mut out = m.empty_like();
    for i in m.indices() {
        let c = g.coords(i);
        let keep = se.offsets().iter().all(|o| {
            m.get_signed([c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]])
        });
        if keep {
            out.set_index(i, true);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [[i64; 3]] {
        const SIX: [[i64; 3]; 6] = [
            [-1, 0, 0],
            [1, 0, 0],
            [0, -1, 0],
            [0, 1, 0],
            [0, 0, -1],
            [0, 0, 1],
        ];
        static TWENTY_SIX: std::sync::OnceLock<Vec<[i64; 3]>> = std::sync::OnceLock::new();
        match self {
            Connectivity::Six => &SIX,
            Connectivity::TwentySix => TWENTY_SIX.get_or_init(|| {
                let mut v = Vec::with_capacity(26);
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if (dx, dy, dz) != (0, 0, 0) {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            }),
        }
    }
}

/// Component id per voxel (0 = unset, components numbered from 1 in order of
/// their minimum linear index) and the component count.
pub fn label_components(m: &BinaryMask, conn: Connectivity) -> (Vec<u32>, usize) {
    let g = m.grid();
    let mut ids = vec![0u32; m.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..m.len() {
        if !m.get_index(start) || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let c = g.coords(i);
            for o in conn.offsets() {
                let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
                if let Some(j) = g.checked_index(p) {
                    if m.get_index(j) && ids[j] == 0 {
                        ids[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (ids, next as usize)
}

/// Connected components ordered by their minimum linear index.
pub fn connected_components(m: &BinaryMask, conn: Connectivity) -> Vec<BinaryMask> {
    let (ids, n) = label_components(m, conn);
    let mut comps = vec![m.empty_like(); n];
    for (i, &id) in ids.iter().enumerate() {
        if id > 0 {
            comps[id as usize - 1].set_index(i, true);
        }
    }
    comps
}

/// Voxels of `m` with at least one 6-neighbor outside `m` (out-of-bounds
/// counts as outside).
pub fn surface_mask(m: &BinaryMask) -> BinaryMask {
    let g = m.grid();
    let mut out = m.empty_like();
    for i in m.indices() {
        let c = g.coords(i);
        let boundary = Connectivity::Six
            .offsets()
            .iter()
            .any(|o| !m.get_signed([c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]]));
        if boundary {
            out.set_index(i, true);
        }
    }
    out
}

/// Surface voxel centers in millimeters, in linear-index order.
pub fn surface_points(m: &BinaryMask) -> Vec<[f64; 3]> {
    let g = m.grid();
    let s = m.spacing();
    surface_mask(m)
        .indices()
        .map(|i| {
            let c = g.coords(i);
            [c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]]
        })
        .collect()
}

/// Euclidean distance, in voxels, from each voxel to the nearest background
/// voxel (out-of-bounds is background). Zero on background.
pub fn distance_transform(m: &BinaryMask) -> Vec<f64> {
    let bg: Vec<bool> = m.bits().iter().map(|&b| !b).collect();
    squared_edt(&bg, m.dims(), [1.0; 3], true)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}
