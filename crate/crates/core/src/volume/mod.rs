//! Multi-class label volumes, binary masks and the voxel morphology used by
//! every error operator.

mod edt;
mod io;
mod mask;
mod morphology;
mod nifti;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use edt::{distance_to_set_mm, squared_edt};
pub use io::{
    load_volume, nifti_from_bytes, nifti_to_bytes, rawl_from_parts, rawl_to_parts, save_volume,
    RawlHeader, VolumeFormat,
};
pub use mask::{BinaryMask, BoundingBox};
pub use morphology::{
    connected_components, dilate, distance_transform, erode, label_components, surface_mask,
    surface_points, Connectivity, StructuringElement,
};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

/// Class id used for background voxels.
pub const BACKGROUND: u8 = 0;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported datatype code {0}; only integer label volumes are accepted")]
    Datatype(i16),
    #[error("unknown label(s) {0:?} absent from the label map")]
    UnknownLabel(Vec<i64>),
    #[error("unknown class {0}")]
    UnknownClass(u8),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch(Dims, Dims),
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

/// Axis convention of the voxel grid. Volumes are always reoriented to
/// R-A-S on load: voxel index increases toward patient Right, Anterior and
/// Superior along the first, second and third axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[default]
    #[serde(rename = "RAS")]
    Ras,
}

/// Row-major (x fastest) linear indexing over a 3D grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub dims: Dims,
}

impl Grid {
    pub fn new(dims: Dims) -> Self {
        Self { dims }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let r = i / self.dims[0];
        [x, r % self.dims[1], r / self.dims[1]]
    }

    /// Linear index of a signed coordinate, `None` when out of bounds.
    #[inline]
    pub fn checked_index(&self, c: [i64; 3]) -> Option<usize> {
        if c.iter().zip(self.dims.iter()).all(|(&v, &d)| v >= 0 && (v as usize) < d) {
            Some(self.index(c[0] as usize, c[1] as usize, c[2] as usize))
        } else {
            None
        }
    }

    /// Index of the voxel whose center is nearest to a continuous point.
    pub fn nearest_index(&self, p: [f64; 3]) -> Option<usize> {
        self.checked_index([p[0].round() as i64, p[1].round() as i64, p[2].round() as i64])
    }
}

/// Default circle-of-Willis class map: 13 arterial segments, background is 0.
pub fn default_cow_label_map() -> BTreeMap<u8, String> {
    [
        (1, "BA"),
        (2, "R-PCA"),
        (3, "L-PCA"),
        (4, "R-ICA"),
        (5, "R-MCA"),
        (6, "L-ICA"),
        (7, "L-MCA"),
        (8, "R-Pcom"),
        (9, "L-Pcom"),
        (10, "Acom"),
        (11, "R-ACA"),
        (12, "L-ACA"),
        (15, "3rd-A2"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect()
}

/// A multi-class voxel label grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: Spacing,
    orientation: Orientation,
    labels: Vec<u8>,
    label_map: BTreeMap<u8, String>,
}

impl LabelVolume {
    /// An all-background volume.
    pub fn new(dims: Dims, spacing: Spacing, label_map: BTreeMap<u8, String>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let n = dims.iter().product();
        Ok(Self {
            dims,
            spacing,
            orientation: Orientation::Ras,
            labels: vec![BACKGROUND; n],
            label_map,
        })
    }

    pub fn from_parts(
        dims: Dims,
        spacing: Spacing,
        labels: Vec<u8>,
        label_map: BTreeMap<u8, String>,
    ) -> Result<Self> {
        check_geometry(dims, spacing)?;
        if labels.len() != dims.iter().product::<usize>() {
            return Err(VolumeError::Geometry(format!(
                "label array has {} entries, dims {:?} require {}",
                labels.len(),
                dims,
                dims.iter().product::<usize>()
            )));
        }
        let mut seen = [false; 256];
        for &l in &labels {
            seen[l as usize] = true;
        }
        let unknown: Vec<i64> = (1..256)
            .filter(|&l| seen[l] && !label_map.contains_key(&(l as u8)))
            .map(|l| l as i64)
            .collect();
        if !unknown.is_empty() {
            return Err(VolumeError::UnknownLabel(unknown));
        }
        Ok(Self {
            dims,
            spacing,
            orientation: Orientation::Ras,
            labels,
            label_map,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dims)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_map(&self) -> &BTreeMap<u8, String> {
        &self.label_map
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.grid().index(x, y, z)]
    }

    /// Sets one voxel. The class must be background or present in the label map.
    pub fn set(&mut self, x: usize, y: usize, z: usize, class: u8) -> Result<()> {
        self.check_class(class)?;
        let i = self.grid().index(x, y, z);
        self.labels[i] = class;
        Ok(())
    }

    pub fn segment_name(&self, class: u8) -> Option<&str> {
        self.label_map.get(&class).map(String::as_str)
    }

    pub fn class_by_name(&self, name: &str) -> Option<u8> {
        self.label_map
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(name))
            .map(|(&k, _)| k)
    }

    fn check_class(&self, class: u8) -> Result<()> {
        if class == BACKGROUND || self.label_map.contains_key(&class) {
            Ok(())
        } else {
            Err(VolumeError::UnknownClass(class))
        }
    }

    /// Binary mask of one class.
    pub fn class_mask(&self, class: u8) -> Result<BinaryMask> {
        if !self.label_map.contains_key(&class) {
            return Err(VolumeError::UnknownClass(class));
        }
        Ok(self.mask_where(|l| l == class))
    }

    /// Mask of all foreground voxels.
    pub fn foreground(&self) -> BinaryMask {
        self.mask_where(|l| l != BACKGROUND)
    }

    pub fn mask_where(&self, pred: impl Fn(u8) -> bool) -> BinaryMask {
        let bits = self.labels.iter().map(|&l| pred(l)).collect();
        BinaryMask::from_bits(self.dims, self.spacing, bits).expect("dims already validated")
    }

    /// Voxel count per class id present in the label map (zero counts included).
    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        let mut hist = [0usize; 256];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        self.label_map.keys().map(|&k| (k, hist[k as usize])).collect()
    }

    /// Classes with at least one voxel.
    pub fn present_classes(&self) -> Vec<u8> {
        self.class_counts()
            .into_iter()
            .filter(|&(_, n)| n > 0)
            .map(|(k, _)| k)
            .collect()
    }

    /// Rewrites a class: voxels of `class` outside `mask` become background,
    /// background voxels inside `mask` become `class`. Voxels of other classes
    /// are never touched.
    pub fn assign_class(&mut self, class: u8, mask: &BinaryMask) -> Result<()> {
        self.check_class(class)?;
        self.check_dims(mask.dims())?;
        for (l, &b) in self.labels.iter_mut().zip(mask.bits()) {
            if *l == class && !b {
                *l = BACKGROUND;
            } else if *l == BACKGROUND && b {
                *l = class;
            }
        }
        Ok(())
    }

    /// Paints background voxels inside `mask` with `class`.
    pub fn paint_background(&mut self, class: u8, mask: &BinaryMask) -> Result<usize> {
        self.check_class(class)?;
        self.check_dims(mask.dims())?;
        let mut n = 0;
        for (l, &b) in self.labels.iter_mut().zip(mask.bits()) {
            if b && *l == BACKGROUND {
                *l = class;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Clears voxels of `class` inside `mask`.
    pub fn clear_class(&mut self, class: u8, mask: &BinaryMask) -> Result<usize> {
        self.check_dims(mask.dims())?;
        let mut n = 0;
        for (l, &b) in self.labels.iter_mut().zip(mask.bits()) {
            if b && *l == class {
                *l = BACKGROUND;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if dims == self.dims {
            Ok(())
        } else {
            Err(VolumeError::DimMismatch(self.dims, dims))
        }
    }

    /// Number of voxels whose label differs between two same-shape volumes.
    pub fn changed_voxels(&self, other: &LabelVolume) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Physical coordinate (mm) of a voxel center.
    pub fn voxel_to_mm(&self, c: [f64; 3]) -> [f64; 3] {
        [
            c[0] * self.spacing[0],
            c[1] * self.spacing[1],
            c[2] * self.spacing[2],
        ]
    }

    /// Mean voxel edge length, used to convert isotropic mm quantities.
    pub fn mean_spacing(&self) -> f64 {
        self.spacing.iter().sum::<f64>() / 3.0
    }
}

fn check_geometry(dims: Dims, spacing: Spacing) -> Result<()> {
    if dims.contains(&0) {
        return Err(VolumeError::Geometry(format!("dims must be positive, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(VolumeError::Geometry(format!(
            "spacing must be positive, got {spacing:?}"
        )));
    }
    Ok(())
}
