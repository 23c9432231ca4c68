//! Synthetic tube phantoms with known centerlines.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::centerline::{Centerline, ProximalTable};
use crate::geometry::{self, catmull_rom, stamp_tube, Vec3};
use crate::volume::{default_cow_label_map, BinaryMask, LabelVolume};

/// Class of the corrupted tube in single-tube phantoms.
pub const TUBE_CLASS: u8 = 7;
/// Class of the short parent stub that marks the proximal end.
pub const PARENT_CLASS: u8 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Straight,
    LShape,
    Helix,
    Arc,
    SCurve,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 5] = [
        PhantomKind::Straight,
        PhantomKind::LShape,
        PhantomKind::Helix,
        PhantomKind::Arc,
        PhantomKind::SCurve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Straight => "straight",
            PhantomKind::LShape => "l_shape",
            PhantomKind::Helix => "helix",
            PhantomKind::Arc => "arc",
            PhantomKind::SCurve => "s_curve",
        }
    }

    /// Tube radius in voxels.
    pub fn radius(self) -> f64 {
        match self {
            PhantomKind::Straight => 3.0,
            PhantomKind::LShape => 4.0,
            PhantomKind::Helix => 2.5,
            PhantomKind::Arc => 5.0,
            PhantomKind::SCurve => 2.0,
        }
    }

    /// Densely sampled axis, before translation into the volume.
    fn axis(self) -> Vec<Vec3> {
        let dense = |n: usize, f: &dyn Fn(f64) -> Vec3| -> Vec<Vec3> {
            (0..=n).map(|i| f(i as f64 / n as f64)).collect()
        };
        match self {
            PhantomKind::Straight => {
                let d = geometry::normalize([1.0, 0.35, 0.2]).unwrap();
                vec![[0.0; 3], geometry::scale(d, 80.0)]
            }
            PhantomKind::LShape => {
                let leg2 = geometry::normalize([0.0, 1.0, 0.6]).unwrap();
                vec![[0.0; 3], [45.0, 0.0, 0.0], geometry::add([45.0, 0.0, 0.0], geometry::scale(leg2, 45.0))]
            }
            PhantomKind::Helix => {
                let (rh, pitch) = (10.0, 40.0);
                let speed = (rh * rh + (pitch / std::f64::consts::TAU).powi(2)).sqrt();
                let theta = 100.0 / speed;
                dense(800, &|t| {
                    let a = theta * t;
                    [rh * a.cos(), rh * a.sin(), pitch * a / std::f64::consts::TAU]
                })
            }
            PhantomKind::Arc => {
                let rc = 40.0;
                let theta = 90.0 / rc;
                dense(800, &|t| {
                    let a = theta * t;
                    [rc * a.sin(), rc * (1.0 - a.cos()), 0.15 * rc * a]
                })
            }
            PhantomKind::SCurve => dense(800, &|t| {
                let x = 92.0 * t;
                [x, 6.0 * (std::f64::consts::TAU * x / 60.0).sin(), 0.0]
            }),
        }
    }
}

/// A labeled volume plus the ground-truth centerline of every segment.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub name: String,
    pub volume: LabelVolume,
    pub centerlines: BTreeMap<u8, Centerline>,
}

impl Phantom {
    /// Single tube of class [`TUBE_CLASS`] with a parent stub of class
    /// [`PARENT_CLASS`] attached at its proximal end.
    pub fn tube(kind: PhantomKind) -> Self {
        Self::tube_from_axis(kind.name(), &kind.axis(), kind.radius(), true)
    }

    /// Straight tube along +x whose centerline has exactly 101 nodes.
    pub fn straight_101() -> Self {
        Self::tube_from_axis("straight_101", &[[0.0; 3], [100.0, 0.0, 0.0]], 3.0, false)
    }

    /// With `through_caps` the centerline runs tip to tip through the rounded
    /// ends, as a skeleton of the mask would; otherwise it stops at the axis
    /// ends.
    fn tube_from_axis(name: &str, axis: &[Vec3], radius: f64, through_caps: bool) -> Self {
        let stub_len = 12.0;
        let start_dir = geometry::normalize(geometry::sub(axis[1], axis[0])).unwrap();
        let stub = [geometry::sub(axis[0], geometry::scale(start_dir, stub_len)), axis[0]];
        // Room for a tube thickened by the largest default factor (2) without
        // touching the grid boundary.
        let margin = 2.0 * radius + 3.0;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in axis.iter().chain(&stub) {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let shift = [margin - lo[0], margin - lo[1], margin - lo[2]];
        let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 2.0 * margin).ceil() as usize + 1);
        let place = |p: &Vec3| geometry::add(*p, shift);
        let axis: Vec<Vec3> = axis.iter().map(place).collect();
        let stub: Vec<Vec3> = stub.iter().map(place).collect();

        let mut v = LabelVolume::new(dims, [1.0; 3], default_cow_label_map()).expect("valid dims");
        let tube = stamp_tube(dims, [1.0; 3], &axis, &vec![radius; axis.len()]);
        v.assign_class(TUBE_CLASS, &tube).unwrap();
        let stub_mask = stamp_tube(dims, [1.0; 3], &stub, &[radius, radius]);
        v.paint_background(PARENT_CLASS, &stub_mask).unwrap();

        let mut centerlines = BTreeMap::new();
        let cap = if through_caps { radius } else { 0.0 };
        centerlines.insert(TUBE_CLASS, axis_centerline(TUBE_CLASS, &axis, cap, &v));
        centerlines.insert(PARENT_CLASS, axis_centerline(PARENT_CLASS, &stub, cap, &v));
        Self {
            name: name.to_string(),
            volume: v,
            centerlines,
        }
    }

    /// Thirteen-segment circle-of-Willis layout. `seed` jitters control
    /// points (up to 2 voxels) and radii (up to 10%).
    pub fn cow(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [112, 96, 72];
        let mut v = LabelVolume::new(dims, [1.0; 3], default_cow_label_map()).expect("valid dims");
        // (class, control points, radius), stamped in this order onto background.
        let layout: [(u8, &[Vec3], f64); 13] = [
            (4, &[[72.0, 60.0, 6.0], [71.0, 55.0, 20.0], [70.0, 52.0, 30.0]], 3.5),
            (6, &[[40.0, 60.0, 6.0], [41.0, 55.0, 20.0], [42.0, 52.0, 30.0]], 3.5),
            (1, &[[56.0, 30.0, 4.0], [56.0, 32.0, 14.0], [56.0, 34.0, 24.0]], 3.5),
            (2, &[[56.0, 34.0, 24.0], [66.0, 31.0, 26.0], [80.0, 24.0, 28.0], [94.0, 14.0, 31.0]], 2.6),
            (3, &[[56.0, 34.0, 24.0], [46.0, 31.0, 26.0], [32.0, 24.0, 28.0], [18.0, 14.0, 31.0]], 2.6),
            (5, &[[70.0, 52.0, 30.0], [82.0, 54.0, 33.0], [100.0, 57.0, 37.0]], 2.8),
            (7, &[[42.0, 52.0, 30.0], [30.0, 54.0, 33.0], [12.0, 57.0, 37.0]], 2.8),
            (8, &[[70.0, 52.0, 30.0], [69.0, 42.0, 28.0], [67.0, 31.0, 26.0]], 2.0),
            (9, &[[42.0, 52.0, 30.0], [43.0, 42.0, 28.0], [45.0, 31.0, 26.0]], 2.0),
            (11, &[[70.0, 52.0, 30.0], [68.0, 62.0, 34.0], [66.0, 72.0, 38.0]], 2.3),
            (12, &[[42.0, 52.0, 30.0], [44.0, 62.0, 34.0], [46.0, 72.0, 38.0]], 2.3),
            (10, &[[66.0, 72.0, 38.0], [56.0, 73.0, 38.0], [46.0, 72.0, 38.0]], 2.0),
            (15, &[[56.0, 73.0, 38.0], [56.0, 78.0, 50.0], [56.0, 84.0, 64.0]], 2.0),
        ];
        let mut axes = Vec::new();
        for (class, pts, r) in layout {
            let jittered: Vec<Vec3> = pts
                .iter()
                .map(|p| p.map(|x| x + rng.random_range(-2.0..=2.0)))
                .collect();
            let radius = r * rng.random_range(0.9..=1.1);
            let axis = catmull_rom(&jittered, None, 0.25);
            let m = stamp_tube(dims, [1.0; 3], &axis, &vec![radius; axis.len()]);
            v.paint_background(class, &m).unwrap();
            axes.push((class, axis, radius));
        }
        let table = ProximalTable::default();
        let centerlines = axes
            .into_iter()
            .map(|(class, axis, r)| (class, axis_centerline(class, &axis, r, &v).anchored(&v, &table)))
            .collect();
        Self {
            name: format!("cow_{seed}"),
            volume: v,
            centerlines,
        }
    }
}

/// Unit-spaced centerline along `axis`, trimmed to the run of nodes lying in
/// the segment's own voxels.
fn axis_centerline(class: u8, axis: &[Vec3], cap: f64, v: &LabelVolume) -> Centerline {
    let mask: BinaryMask = v.class_mask(class).expect("class in map");
    let mut axis = axis.to_vec();
    if cap > 0.0 && axis.len() >= 2 {
        let n = axis.len();
        let outward = |a: Vec3, b: Vec3| geometry::normalize(geometry::sub(a, b)).unwrap_or([0.0; 3]);
        let head = geometry::add(axis[0], geometry::scale(outward(axis[0], axis[1]), cap));
        let tail = geometry::add(axis[n - 1], geometry::scale(outward(axis[n - 1], axis[n - 2]), cap));
        axis.insert(0, head);
        axis.push(tail);
    }
    let nodes = crate::centerline::resample_polyline(&axis, 1.0);
    let g = mask.grid();
    let inside = |p: &Vec3| g.nearest_index(*p).is_some_and(|i| mask.get_index(i));
    let first = nodes.iter().position(inside).expect("axis crosses its own tube");
    let last = nodes.iter().rposition(inside).unwrap();
    Centerline::from_path(class, nodes[first..=last].to_vec(), true, &mask).expect("phantom axis is a valid path")
}
