use super::{check_geometry, Dims, Grid, Orientation, Result, Spacing, VolumeError};

/// One boolean per voxel, sharing the grid geometry of its parent volume.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    dims: Dims,
    spacing: Spacing,
    orientation: Orientation,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            spacing,
            orientation: Orientation::Ras,
            bits: vec![false; n],
        }
    }

    pub fn full(dims: Dims, spacing: Spacing) -> Self {
        let mut m = Self::empty(dims, spacing);
        m.bits.fill(true);
        m
    }

    pub fn from_bits(dims: Dims, spacing: Spacing, bits: Vec<bool>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        if bits.len() != dims.iter().product::<usize>() {
            return Err(VolumeError::Geometry(format!(
                "mask has {} bits, dims {dims:?} require {}",
                bits.len(),
                dims.iter().product::<usize>()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            orientation: Orientation::Ras,
            bits,
        })
    }

    /// Mask with the same geometry and no voxels set.
    pub fn empty_like(&self) -> Self {
        Self::empty(self.dims, self.spacing)
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.grid().index(x, y, z)]
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Out-of-bounds coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, c: [i64; 3]) -> bool {
        self.grid().checked_index(c).is_some_and(|i| self.bits[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.grid().index(x, y, z);
        self.bits[i] = value;
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Linear indices of set voxels in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn complement(&self) -> Self {
        let mut m = self.clone();
        m.bits.iter_mut().for_each(|b| *b = !*b);
        m
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims, other.dims, "mask dims differ");
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self {
            dims: self.dims,
            spacing: self.spacing,
            orientation: self.orientation,
            bits,
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn union_in_place(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims, "mask dims differ");
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// Tight bounding box of the set voxels, `None` when empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let g = self.grid();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for i in self.indices() {
            any = true;
            let c = g.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }

    /// Extracts the sub-grid `bbox` as a standalone mask.
    pub fn crop(&self, bbox: &BoundingBox) -> Self {
        let dims = bbox.dims();
        let src = self.grid();
        let dst = Grid::new(dims);
        let mut bits = vec![false; dst.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let s0 = src.index(bbox.lo[0], bbox.lo[1] + y, bbox.lo[2] + z);
                let d0 = dst.index(0, y, z);
                bits[d0..d0 + dims[0]].copy_from_slice(&self.bits[s0..s0 + dims[0]]);
            }
        }
        Self {
            dims,
            spacing: self.spacing,
            orientation: self.orientation,
            bits,
        }
    }

    /// Writes a cropped mask back into a full-size mask (inverse of [`crop`](Self::crop)).
    pub fn uncrop(&self, bbox: &BoundingBox, full_dims: Dims) -> Self {
        let mut out = Self::empty(full_dims, self.spacing);
        let dst = Grid::new(full_dims);
        let src = self.grid();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                let s0 = src.index(0, y, z);
                let d0 = dst.index(bbox.lo[0], bbox.lo[1] + y, bbox.lo[2] + z);
                out.bits[d0..d0 + self.dims[0]].copy_from_slice(&self.bits[s0..s0 + self.dims[0]]);
            }
        }
        out
    }
}

/// Inclusive voxel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn dims(&self) -> Dims {
        [
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        ]
    }

    /// Grows the box by `margin` voxels on every side, clipped to `dims`.
    pub fn padded(&self, margin: usize, dims: Dims) -> Self {
        let mut b = *self;
        for (a, d) in dims.into_iter().enumerate() {
            b.lo[a] = b.lo[a].saturating_sub(margin);
            b.hi[a] = (b.hi[a] + margin).min(d - 1);
        }
        b
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut b = *self;
        for a in 0..3 {
            b.lo[a] = b.lo[a].min(other.lo[a]);
            b.hi[a] = b.hi[a].max(other.hi[a]);
        }
        b
    }

    /// Offset of the box origin, as a float vector for coordinate shifts.
    pub fn origin(&self) -> [f64; 3] {
        [self.lo[0] as f64, self.lo[1] as f64, self.lo[2] as f64]
    }
}
