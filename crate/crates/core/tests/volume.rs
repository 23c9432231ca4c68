use std::collections::BTreeMap;

use forge_core::volume::{
    connected_components, default_cow_label_map, dilate, distance_transform, erode, load_volume, save_volume,
    surface_points, BinaryMask, BoundingBox, Connectivity, LabelVolume, StructuringElement, VolumeError,
    VolumeFormat,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: [usize; 3] = [8, 8, 8];

fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], p: f64) -> BinaryMask {
    let bits = (0..dims.iter().product::<usize>()).map(|_| rng.random_bool(p)).collect();
    BinaryMask::from_bits(dims, [1.0; 3], bits).unwrap()
}

fn coords(dims: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    (0..dims[2]).flat_map(move |z| (0..dims[1]).flat_map(move |y| (0..dims[0]).map(move |x| [x, y, z])))
}

fn volume_strategy() -> impl Strategy<Value = LabelVolume> {
    let classes: Vec<u8> = std::iter::once(0).chain(default_cow_label_map().into_keys()).collect();
    (
        proptest::collection::vec(proptest::sample::select(classes), 512),
        proptest::array::uniform3(0.2f64..3.0),
    )
        .prop_map(|(labels, spacing)| LabelVolume::from_parts(D, spacing, labels, default_cow_label_map()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_round_trip(v in volume_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        for (name, format) in [("v.rawl", VolumeFormat::Rawl), ("v.nii", VolumeFormat::Nifti), ("v.nii.gz", VolumeFormat::Nifti)] {
            let path = dir.path().join(name);
            save_volume(&v, &path, format).unwrap();
            let back = load_volume(&path, format).unwrap();
            prop_assert_eq!(back.labels(), v.labels());
            prop_assert_eq!(back.dims(), v.dims());
            for a in 0..3 {
                prop_assert!((back.spacing()[a] - v.spacing()[a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn class_mask_counts_match_linear_scan(v in volume_strategy()) {
        for class in v.label_map().keys() {
            let expected = v.labels().iter().filter(|&&l| l == *class).count();
            prop_assert_eq!(v.class_mask(*class).unwrap().count(), expected);
        }
    }
}

#[test]
fn empty_rawl_body_is_one_byte_per_voxel() {
    let dir = tempfile::tempdir().unwrap();
    let v = LabelVolume::new([2, 2, 2], [1.0; 3], default_cow_label_map()).unwrap();
    let path = dir.path().join("empty.rawl");
    save_volume(&v, &path, VolumeFormat::Rawl).unwrap();
    assert_eq!(std::fs::read(dir.path().join("empty.rawl.bin")).unwrap(), vec![0u8; 8]);
    let back = load_volume(&dir.path().join("empty.rawl.json"), VolumeFormat::Rawl).unwrap();
    assert!(back.foreground().is_empty());
}

#[test]
fn nifti_single_voxel() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = LabelVolume::new([4, 5, 6], [0.5, 0.6, 0.7], default_cow_label_map()).unwrap();
    v.set(1, 2, 3, 7).unwrap();
    let path = dir.path().join("one.nii.gz");
    save_volume(&v, &path, VolumeFormat::Nifti).unwrap();
    let back = load_volume(&path, VolumeFormat::Nifti).unwrap();
    assert_eq!(back.dims(), [4, 5, 6]);
    assert_eq!(back.class_mask(7).unwrap().count(), 1);
    assert_eq!(back.get(1, 2, 3), 7);
}

#[test]
fn unknown_labels_are_listed() {
    let map: BTreeMap<u8, String> = [(1, "BA".to_string())].into();
    let err = LabelVolume::from_parts([2, 1, 1], [1.0; 3], vec![9, 42], map).unwrap_err();
    match err {
        VolumeError::UnknownLabel(ids) => assert_eq!(ids, vec![9, 42]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn ball_sizes() {
    let mut m = BinaryMask::empty([11, 11, 11], [1.0; 3]);
    m.set(5, 5, 5, true);
    assert_eq!(dilate(&m, &StructuringElement::ball(1.0).unwrap()).count(), 7);
    assert_eq!(dilate(&m, &StructuringElement::ball(1.5).unwrap()).count(), 19);
    assert!(erode(&m, &StructuringElement::ball(1.0).unwrap()).is_empty());
    let empty = BinaryMask::empty([4, 4, 4], [1.0; 3]);
    assert!(dilate(&empty, &StructuringElement::ball(2.0).unwrap()).is_empty());
}

#[test]
fn ball_offsets_are_the_lattice_points_of_the_ball() {
    for r in [0.5, 1.0, 1.5, 2.0, 2.7, 3.2] {
        let se = StructuringElement::ball(r).unwrap();
        let k = r.ceil() as i64;
        let mut expected = Vec::new();
        for z in -k..=k {
            for y in -k..=k {
                for x in -k..=k {
                    if ((x * x + y * y + z * z) as f64) <= r * r {
                        expected.push([x, y, z]);
                    }
                }
            }
        }
        let mut got = se.offsets().to_vec();
        got.sort();
        expected.sort();
        assert_eq!(got, expected, "radius {r}");
        assert!(got.contains(&[0, 0, 0]));
    }
}

#[test]
fn erosion_of_cube_and_full_grid() {
    let se = StructuringElement::ball(1.0).unwrap();
    let mut cube = BinaryMask::empty([5, 5, 5], [1.0; 3]);
    for c in coords([3, 3, 3]) {
        cube.set(c[0] + 1, c[1] + 1, c[2] + 1, true);
    }
    let e = erode(&cube, &se);
    assert_eq!(e.count(), 1);
    assert!(e.get(2, 2, 2));

    let full = BinaryMask::full([4, 4, 4], [1.0; 3]);
    let e = erode(&full, &se);
    for [x, y, z] in coords([4, 4, 4]) {
        let interior = [x, y, z].iter().all(|&a| a > 0 && a < 3);
        assert_eq!(e.get(x, y, z), interior);
    }
}

fn brute_dilate(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let mut out = m.empty_like();
    for [x, y, z] in coords(m.dims()) {
        let hit = se
            .offsets()
            .iter()
            .any(|o| m.get_signed([x as i64 - o[0], y as i64 - o[1], z as i64 - o[2]]));
        out.set(x, y, z, hit);
    }
    out
}

fn brute_erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let mut out = m.empty_like();
    for [x, y, z] in coords(m.dims()) {
        let all = se
            .offsets()
            .iter()
            .all(|o| m.get_signed([x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]]));
        out.set(x, y, z, all);
    }
    out
}

/// `m` embedded in a grid grown by `pad` on every side, and the window that
/// maps back to the original grid.
fn padded(m: &BinaryMask, pad: usize) -> (BinaryMask, BoundingBox) {
    let d = m.dims();
    let dims = [d[0] + 2 * pad, d[1] + 2 * pad, d[2] + 2 * pad];
    let mut out = BinaryMask::empty(dims, m.spacing());
    for [x, y, z] in coords(d) {
        out.set(x + pad, y + pad, z + pad, m.get(x, y, z));
    }
    let mut window = BinaryMask::empty(dims, m.spacing());
    window.set(pad, pad, pad, true);
    window.set(pad + d[0] - 1, pad + d[1] - 1, pad + d[2] - 1, true);
    (out, window.bounding_box().unwrap())
}

#[test]
fn morphology_laws_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let p = rng.random_range(0.1..0.9);
        let m = random_mask(&mut rng, D, p);
        let se = StructuringElement::ball([1.0, 1.5, 2.0, 2.3][case % 4]).unwrap();
        let dil = dilate(&m, &se);
        let ero = erode(&m, &se);
        assert_eq!(dil, brute_dilate(&m, &se), "case {case}");
        assert_eq!(ero, brute_erode(&m, &se), "case {case}");
        assert!(m.is_subset_of(&dil), "extensive, case {case}");
        assert!(ero.is_subset_of(&m), "anti-extensive, case {case}");
        assert!(dilate(&ero, &se).is_subset_of(&m), "opening, case {case}");

        // Erosion reads outside the grid as background while dilation clips,
        // so closing and duality are checked with the grid padded.
        let pad = 2 * se.radius().ceil() as usize;
        let (big, window) = padded(&m, pad);
        let closed = erode(&dilate(&big, &se), &se).crop(&window);
        assert!(m.is_subset_of(&closed), "closing, case {case}");
        let dual = dilate(&big.complement(), &se).complement().crop(&window);
        assert_eq!(ero, dual, "duality, case {case}");
    }
}

fn flood_fill_count(m: &BinaryMask, six: bool) -> usize {
    fn visit(m: &BinaryMask, seen: &mut [bool], c: [i64; 3], six: bool) {
        let g = m.grid();
        let Some(i) = g.checked_index(c) else { return };
        if seen[i] || !m.get_index(i) {
            return;
        }
        seen[i] = true;
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let n = dx.abs() + dy.abs() + dz.abs();
                    if n == 0 || (six && n > 1) {
                        continue;
                    }
                    visit(m, seen, [c[0] + dx, c[1] + dy, c[2] + dz], six);
                }
            }
        }
    }
    let mut seen = vec![false; m.len()];
    let mut count = 0;
    for c in coords(m.dims()) {
        let i = m.grid().index(c[0], c[1], c[2]);
        if m.get_index(i) && !seen[i] {
            count += 1;
            visit(m, &mut seen, c.map(|a| a as i64), six);
        }
    }
    count
}

#[test]
fn components_match_flood_fill() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let m = random_mask(&mut rng, [6, 6, 6], 0.3);
        for (conn, six) in [(Connectivity::Six, true), (Connectivity::TwentySix, false)] {
            let comps = connected_components(&m, conn);
            assert_eq!(comps.len(), flood_fill_count(&m, six));
            let mut union = m.empty_like();
            for (k, c) in comps.iter().enumerate() {
                assert_eq!(c.intersection_count(&union), 0, "components overlap");
                union.union_in_place(c);
                if k > 0 {
                    let first = |c: &BinaryMask| c.indices().next().unwrap();
                    assert!(first(&comps[k - 1]) < first(c), "ordered by minimum index");
                }
            }
            assert_eq!(union, m);
        }
    }
    let mut two = BinaryMask::empty([4, 4, 4], [1.0; 3]);
    two.set(0, 0, 0, true);
    two.set(3, 3, 3, true);
    assert_eq!(connected_components(&two, Connectivity::TwentySix).len(), 2);
}

#[test]
fn surface_points_match_neighbor_count() {
    let mut cube = BinaryMask::empty([3, 3, 3], [1.0; 3]);
    for [x, y, z] in coords([3, 3, 3]) {
        cube.set(x, y, z, true);
    }
    assert_eq!(surface_points(&cube).len(), 26);
    assert!(surface_points(&BinaryMask::empty([3, 3, 3], [1.0; 3])).is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let m = random_mask(&mut rng, D, 0.6);
        let mut expected = Vec::new();
        for [x, y, z] in coords(D) {
            if !m.get(x, y, z) {
                continue;
            }
            let c = [x as i64, y as i64, z as i64];
            let exposed = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                .iter()
                .any(|o: &[i64; 3]| !m.get_signed([c[0] + o[0], c[1] + o[1], c[2] + o[2]]));
            if exposed {
                expected.push([x as f64, y as f64, z as f64]);
            }
        }
        let got = surface_points(&m);
        assert_eq!(got, expected);
        assert_eq!(got.is_empty(), m.is_empty());
    }
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let m = random_mask(&mut rng, D, 0.8);
        let dt = distance_transform(&m);
        // Background is every unset voxel plus a one-voxel ring outside the grid.
        let mut bg = Vec::new();
        for z in -1..=8i64 {
            for y in -1..=8i64 {
                for x in -1..=8i64 {
                    if !m.get_signed([x, y, z]) {
                        bg.push([x, y, z]);
                    }
                }
            }
        }
        for [x, y, z] in coords(D) {
            let i = m.grid().index(x, y, z);
            let want = bg
                .iter()
                .map(|b| (((b[0] - x as i64).pow(2) + (b[1] - y as i64).pow(2) + (b[2] - z as i64).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((dt[i] - want).abs() < 1e-9, "{:?}: {} vs {}", [x, y, z], dt[i], want);
        }
    }
    let mut cube = BinaryMask::empty([7, 7, 7], [1.0; 3]);
    for [x, y, z] in coords([5, 5, 5]) {
        cube.set(x + 1, y + 1, z + 1, true);
    }
    assert_eq!(distance_transform(&cube)[cube.grid().index(3, 3, 3)], 3.0);
}
