use std::collections::BTreeMap;

use forge_core::centerline::{estimate_radius, Anchor};
use forge_core::corruption::{
    apply_error, assign_drops, load_manifest, partition_instructions, rebuild_error_volume, sample_error,
    synthesize_dataset, CorruptionConfig, DatasetConfig, EditRecord, ErrorKind, Subject,
};
use forge_core::hash::content_hash;
use forge_core::phantom::{Phantom, PhantomKind, TUBE_CLASS};
use forge_core::volume::{connected_components, load_volume, Connectivity, LabelVolume};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn components(v: &LabelVolume, class: u8) -> usize {
    connected_components(&v.class_mask(class).unwrap(), Connectivity::TwentySix).len()
}

fn record(kind: ErrorKind, span: Option<[f64; 2]>, magnitude: Option<f64>) -> EditRecord {
    let mut r = EditRecord::new(kind, TUBE_CLASS, 1);
    r.span = span;
    r.anchor = span.map(|_| Anchor::Proximal);
    r.magnitude = magnitude;
    if kind == ErrorKind::Fragment {
        r.fragment_count = Some(3);
    }
    r
}

#[test]
fn sampling_is_deterministic_and_respects_forced_kind() {
    let cfg = CorruptionConfig {
        kinds: vec![ErrorKind::MissingSegment],
        ..Default::default()
    };
    let r = sample_error(&mut ChaCha8Rng::seed_from_u64(3), 7, &cfg).unwrap();
    assert_eq!(r.kind, ErrorKind::MissingSegment);
    assert_eq!(r.segment_id, 7);
    assert!(r.span.is_none() && r.magnitude.is_none());

    let cfg = CorruptionConfig::default();
    let a = sample_error(&mut ChaCha8Rng::seed_from_u64(99), 5, &cfg).unwrap();
    let b = sample_error(&mut ChaCha8Rng::seed_from_u64(99), 5, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_configs_are_rejected() {
    let empty = CorruptionConfig {
        kinds: vec![],
        ..Default::default()
    };
    assert!(sample_error(&mut ChaCha8Rng::seed_from_u64(0), 1, &empty).is_err());
    let inverted = CorruptionConfig {
        factor: [2.0, 1.2],
        ..Default::default()
    };
    assert!(sample_error(&mut ChaCha8Rng::seed_from_u64(0), 1, &inverted).is_err());
}

#[test]
fn kind_frequencies_are_uniform() {
    let cfg = CorruptionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let mut counts: BTreeMap<ErrorKind, usize> = BTreeMap::new();
    for _ in 0..n {
        let r = sample_error(&mut rng, 1, &cfg).unwrap();
        r.validate().unwrap();
        *counts.entry(r.kind).or_default() += 1;
    }
    let k = ErrorKind::ALL.len() as f64;
    let expected = n as f64 / k;
    let mut chi2 = 0.0;
    for kind in ErrorKind::ALL {
        let c = counts.get(&kind).copied().unwrap_or(0) as f64;
        assert!((c / n as f64 - 1.0 / k).abs() <= 0.02, "{kind}: {c}");
        chi2 += (c - expected).powi(2) / expected;
    }
    // 99.9th percentile of chi-square with 7 degrees of freedom.
    assert!(chi2 < 24.32, "chi2 {chi2}");
}

#[test]
fn missing_segment_clears_only_its_class() {
    let p = Phantom::cow(1);
    let c = &p.centerlines[&7];
    let r = EditRecord::new(ErrorKind::MissingSegment, 7, 0);
    r.validate().unwrap();
    let out = apply_error(&p.volume, c, &r, &CorruptionConfig::default()).unwrap();
    assert!(out.class_mask(7).unwrap().is_empty());
    for class in p.volume.present_classes().into_iter().filter(|&k| k != 7) {
        assert_eq!(out.class_mask(class).unwrap(), p.volume.class_mask(class).unwrap());
    }
}

#[test]
fn disconnect_splits_straight_tube() {
    let p = Phantom::tube(PhantomKind::Straight);
    let c = &p.centerlines[&TUBE_CLASS];
    assert_eq!(components(&p.volume, TUBE_CLASS), 1);
    let r = record(ErrorKind::Disconnect, Some([40.0, 60.0]), Some(20.0));
    let out = apply_error(&p.volume, c, &r, &CorruptionConfig::default()).unwrap();
    assert_eq!(components(&out, TUBE_CLASS), 2);
}

#[test]
fn global_thicken_reaches_target_radius() {
    let p = Phantom::tube(PhantomKind::Straight);
    assert_eq!(PhantomKind::Straight.radius(), 3.0);
    let c = &p.centerlines[&TUBE_CLASS];
    let r = record(ErrorKind::GlobalThicken, None, Some(1.5));
    let out = apply_error(&p.volume, c, &r, &CorruptionConfig::default()).unwrap();
    let m = out.class_mask(TUBE_CLASS).unwrap();
    // Interior nodes only; the rounded caps are thinner by construction.
    let interior: Vec<_> = c.fractions().iter().enumerate().filter(|(_, f)| **f > 0.15 && **f < 0.85).collect();
    let mean = interior
        .iter()
        .map(|(i, _)| estimate_radius(&m, c.nodes()[*i]).unwrap())
        .sum::<f64>()
        / interior.len() as f64;
    assert!((4.0..=5.0).contains(&mean), "mean radius {mean}");
}

#[test]
fn per_kind_postconditions_on_phantoms() {
    let cfg = CorruptionConfig::default();
    for pk in PhantomKind::ALL {
        let p = Phantom::tube(pk);
        let c = &p.centerlines[&TUBE_CLASS];
        let before = p.volume.class_mask(TUBE_CLASS).unwrap().count();
        for kind in ErrorKind::ALL {
            for seed in 0..3 {
                let cfg = CorruptionConfig {
                    kinds: vec![kind],
                    ..cfg.clone()
                };
                let r = sample_error(&mut ChaCha8Rng::seed_from_u64(seed), TUBE_CLASS, &cfg).unwrap();
                let out = apply_error(&p.volume, c, &r, &cfg).unwrap();
                let again = apply_error(&p.volume, c, &r, &cfg).unwrap();
                assert_eq!(out.labels(), again.labels(), "{pk:?} {kind} determinism");
                for (a, b) in p.volume.labels().iter().zip(out.labels()) {
                    if a != b {
                        assert!(*a == TUBE_CLASS || *a == 0, "{pk:?} {kind}: class {a} touched");
                        assert!(*b == TUBE_CLASS || *b == 0, "{pk:?} {kind}: wrote class {b}");
                    }
                }
                let after = out.class_mask(TUBE_CLASS).unwrap().count();
                let n = components(&out, TUBE_CLASS);
                let tag = format!("{pk:?} {kind} seed {seed}");
                match kind {
                    ErrorKind::GlobalThicken | ErrorKind::LocalThicken => assert!(after > before, "{tag}"),
                    ErrorKind::GlobalThin | ErrorKind::LocalThin => assert!(after < before, "{tag}"),
                    ErrorKind::MissingSegment => assert_eq!(after, 0, "{tag}"),
                    ErrorKind::Shorten => {
                        assert_eq!(n, 1, "{tag}");
                        assert!(after < before, "{tag}");
                    }
                    ErrorKind::Disconnect => assert!(n >= 2, "{tag}"),
                    ErrorKind::Fragment => assert!(n >= r.fragment_count.unwrap() as usize, "{tag}: {n} pieces"),
                }
            }
        }
    }
}

#[test]
fn drop_rate_matches_probability() {
    let mut records: Vec<EditRecord> = (0..10_000).map(|i| EditRecord::new(ErrorKind::MissingSegment, 1, i)).collect();
    assign_drops(&mut records, 0.2, &mut ChaCha8Rng::seed_from_u64(17));
    let frac = records.iter().filter(|r| r.dropped).count() as f64 / records.len() as f64;
    assert!((frac - 0.2).abs() <= 0.01, "dropped fraction {frac}");
}

#[test]
fn round_robin_partition() {
    let items: Vec<u32> = (0..13).collect();
    let parts = partition_instructions(&items, 4).unwrap();
    assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3, 3]);
    let mut union: Vec<u32> = parts.concat();
    union.sort();
    assert_eq!(union, items);
    assert_eq!(partition_instructions(&items, 1).unwrap(), vec![items.clone()]);
    assert_eq!(partition_instructions(&items, 13).unwrap().len(), 13);
    assert!(partition_instructions(&items, 0).is_err());
}

fn two_subjects() -> Vec<Subject> {
    vec![Subject::from_phantom(Phantom::cow(1)), Subject::from_phantom(Phantom::cow(2))]
}

#[test]
fn dataset_has_fifteen_variants_per_subject_and_rebuilds_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        seed: 42,
        ..Default::default()
    };
    let summary = synthesize_dataset(&two_subjects(), &cfg, dir.path()).unwrap();
    assert_eq!(summary.samples, 30);
    let samples = load_manifest(&summary.manifest).unwrap();
    assert_eq!(samples.len(), 30);
    let error_files = std::fs::read_dir(dir.path().join("errors"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().to_string_lossy().ends_with(".rawl.bin"))
        .count();
    assert_eq!(error_files, 30);
    for sub in ["cow_1", "cow_2"] {
        let variants: Vec<usize> = samples.iter().filter(|s| s.subject_id == sub).map(|s| s.variant_id).collect();
        assert_eq!(variants, (0..15).collect::<Vec<_>>());
    }
    for s in &samples {
        let segs: Vec<u8> = s.records.iter().map(|r| r.segment_id).collect();
        let mut unique = segs.clone();
        unique.dedup();
        assert_eq!(segs, unique, "records reference distinct segments");
        // Every segment is either corrupted or reported as a failure.
        assert_eq!(s.records.len() + s.failures.len(), 13, "{:?}", s.failures);
        let stored = load_volume(&dir.path().join(&s.error_path), s.format).unwrap();
        let rebuilt = rebuild_error_volume(dir.path(), s, &cfg.corruption).unwrap();
        assert_eq!(content_hash(&stored), content_hash(&rebuilt));
        assert_eq!(stored.labels(), rebuilt.labels());
    }

    // A second run from the same seed is byte-identical.
    let dir2 = tempfile::tempdir().unwrap();
    let again = synthesize_dataset(&two_subjects(), &cfg, dir2.path()).unwrap();
    assert_eq!(std::fs::read(&summary.manifest).unwrap(), std::fs::read(&again.manifest).unwrap());
}

#[test]
fn dropping_every_record_leaves_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        variants_per_subject: 2,
        drop_p: 1.0,
        ..Default::default()
    };
    let subjects = vec![Subject::from_phantom(Phantom::cow(3))];
    let summary = synthesize_dataset(&subjects, &cfg, dir.path()).unwrap();
    for s in load_manifest(&summary.manifest).unwrap() {
        assert!(s.records.iter().all(|r| r.dropped));
        let err = load_volume(&dir.path().join(&s.error_path), s.format).unwrap();
        let gt = load_volume(&dir.path().join(&s.gt_path), s.format).unwrap();
        assert_eq!(err.labels(), gt.labels());
    }
}
