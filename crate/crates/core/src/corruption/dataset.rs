use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{annotate_record, apply_error, apply_records, sample_error, CorruptionConfig, CorruptionError, EditRecord, Result};
use crate::centerline::{skeletonize, Centerline, CenterlineJson, ProximalTable};
use crate::instruction::{render_instruction, Vocabulary};
use crate::llm_bridge::{Bridge, BridgeConfig};
use crate::phantom::Phantom;
use crate::volume::{load_volume, save_volume, LabelVolume, VolumeFormat};

/// One ground-truth subject: a labeled volume and a centerline per segment.
#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub volume: LabelVolume,
    pub centerlines: BTreeMap<u8, Centerline>,
}

impl Subject {
    pub fn from_phantom(p: Phantom) -> Self {
        Self {
            id: p.name,
            volume: p.volume,
            centerlines: p.centerlines,
        }
    }

    /// Extracts centerlines for every present class. Segments that cannot be
    /// skeletonized are reported and left out.
    pub fn from_volume(id: impl Into<String>, volume: LabelVolume, table: &ProximalTable) -> (Self, Vec<SegmentFailure>) {
        let mut centerlines = BTreeMap::new();
        let mut failures = Vec::new();
        for class in volume.present_classes() {
            let result = volume
                .class_mask(class)
                .map_err(CorruptionError::from)
                .and_then(|m| Ok(skeletonize(&m)?));
            match result {
                Ok(c) => {
                    centerlines.insert(class, c.with_segment_id(class).anchored(&volume, table));
                }
                Err(e) => failures.push(SegmentFailure {
                    segment_id: class,
                    stage: "centerline".into(),
                    error: e.to_string(),
                }),
            }
        }
        let subject = Self {
            id: id.into(),
            volume,
            centerlines,
        };
        (subject, failures)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFailure {
    pub segment_id: u8,
    pub stage: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub variants_per_subject: usize,
    pub drop_p: f64,
    pub seed: u64,
    pub corruption: CorruptionConfig,
    pub format: VolumeFormat,
    /// Worker threads over subjects; 0 uses the available parallelism.
    pub jobs: usize,
    pub bridge: BridgeConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            variants_per_subject: 15,
            drop_p: 0.2,
            seed: 0,
            corruption: CorruptionConfig::default(),
            format: VolumeFormat::Rawl,
            jobs: 0,
            bridge: BridgeConfig::default(),
        }
    }
}

/// One manifest line: an erroneous variant of a subject. Paths are relative
/// to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTuple {
    pub subject_id: String,
    pub variant_id: usize,
    pub gt_path: String,
    pub error_path: String,
    pub centerlines_path: String,
    pub format: VolumeFormat,
    pub records: Vec<EditRecord>,
    /// One document per non-dropped record.
    pub instruction_docs: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<SegmentFailure>,
    /// Records whose paraphrase was rejected and replaced by the template.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paraphrase_flags: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub manifest: PathBuf,
    pub samples: usize,
    pub records: usize,
    pub dropped: usize,
    pub failures: usize,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Child seed for a path of indices below `base`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Flags each record dropped independently with probability `p`.
pub fn assign_drops<R: Rng + ?Sized>(records: &mut [EditRecord], p: f64, rng: &mut R) {
    let p = p.clamp(0.0, 1.0);
    for r in records {
        r.dropped = rng.random_bool(p);
    }
}

/// Round-robin split into `k` disjoint lists: item `i` goes to list `i % k`.
pub fn partition_instructions<T: Clone>(items: &[T], k: usize) -> Result<Vec<Vec<T>>> {
    if k < 1 {
        return Err(CorruptionError::InvalidConfig("partition count must be at least 1".into()));
    }
    let mut out = vec![Vec::new(); k];
    for (i, x) in items.iter().enumerate() {
        out[i % k].push(x.clone());
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorruptionError + '_ {
    move |source| CorruptionError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> CorruptionError + '_ {
    move |source| CorruptionError::Json {
        path: path.display().to_string(),
        source,
    }
}

fn volume_name(stem: &str, format: VolumeFormat) -> String {
    match format {
        VolumeFormat::Rawl => format!("{stem}.rawl"),
        VolumeFormat::Nifti => format!("{stem}.nii.gz"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(json_err(path))?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn load_centerlines(path: &Path, v: &LabelVolume) -> Result<BTreeMap<u8, Centerline>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let list: Vec<CenterlineJson> = serde_json::from_slice(&bytes).map_err(json_err(path))?;
    list.iter()
        .map(|j| Ok((j.segment_id, Centerline::from_json(j, v)?)))
        .collect()
}

struct SubjectOutput {
    samples: Vec<SampleTuple>,
}

fn synthesize_subject(
    index: usize,
    subject: &Subject,
    cfg: &DatasetConfig,
    out_dir: &Path,
    bridge: &Bridge,
) -> Result<SubjectOutput> {
    let vocab = Vocabulary::from_label_map(subject.volume.label_map());
    let gt_rel = format!("gt/{}", volume_name(&subject.id, cfg.format));
    save_volume(&subject.volume, &out_dir.join(&gt_rel), cfg.format)?;
    let cl_rel = format!("gt/{}.centerlines.json", subject.id);
    let cl_json: Vec<CenterlineJson> = subject.centerlines.values().map(Centerline::to_json).collect();
    write_json(&out_dir.join(&cl_rel), &cl_json)?;
    // Use the reloaded centerlines so a rebuild from disk sees exactly the
    // same geometry.
    let gt = load_volume(&out_dir.join(&gt_rel), cfg.format)?;
    let centerlines = load_centerlines(&out_dir.join(&cl_rel), &gt)?;

    let mut samples = Vec::with_capacity(cfg.variants_per_subject);
    for variant in 0..cfg.variants_per_subject {
        let seed = derive_seed(cfg.seed, &[index as u64, variant as u64]);
        let stem = format!("{}_v{variant:02}", subject.id);
        let mut current = gt.clone();
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (&class, c) in &centerlines {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class as u64]));
            let record = sample_error(&mut rng, class, &cfg.corruption).and_then(|r| annotate_record(&r, c, &gt));
            let mut record = match record {
                Ok(r) => r,
                Err(e) => {
                    failures.push(SegmentFailure {
                        segment_id: class,
                        stage: "sample".into(),
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class as u64, 0xd7]));
            assign_drops(std::slice::from_mut(&mut record), cfg.drop_p, &mut drop_rng);
            if !record.dropped {
                match apply_error(&current, c, &record, &cfg.corruption) {
                    Ok(v) => current = v,
                    Err(e) => {
                        failures.push(SegmentFailure {
                            segment_id: class,
                            stage: "apply".into(),
                            error: e.to_string(),
                        });
                        continue;
                    }
                }
            }
            records.push(record);
        }
        let error_rel = format!("errors/{}", volume_name(&stem, cfg.format));
        save_volume(&current, &out_dir.join(&error_rel), cfg.format)?;

        let mut instruction_docs = Vec::with_capacity(records.len());
        let mut paraphrase_flags = Vec::new();
        // A dropped error never reached the volume, so nothing asks to undo it.
        for r in records.iter().filter(|r| !r.dropped) {
            let Ok(doc) = render_instruction(r, &vocab) else {
                failures.push(SegmentFailure {
                    segment_id: r.segment_id,
                    stage: "render".into(),
                    error: format!("segment {} has no name", r.segment_id),
                });
                continue;
            };
            let p = bridge.paraphrase(&doc, &vocab);
            if p.flagged {
                paraphrase_flags.push(r.segment_id);
            }
            let rel = format!("instructions/{stem}_s{:02}.json", r.segment_id);
            write_json(&out_dir.join(&rel), &p.doc)?;
            instruction_docs.push(rel);
        }
        samples.push(SampleTuple {
            subject_id: subject.id.clone(),
            variant_id: variant,
            gt_path: gt_rel.clone(),
            error_path: error_rel,
            centerlines_path: cl_rel.clone(),
            format: cfg.format,
            records,
            instruction_docs,
            seed,
            failures,
            paraphrase_flags,
        });
    }
    Ok(SubjectOutput { samples })
}

/// Writes ground truths, erroneous variants, instruction documents and a
/// JSONL manifest (`manifest.jsonl`) under `out_dir`. Each variant corrupts
/// every segment with a centerline once; per-segment failures are recorded
/// in the sample and do not stop the run.
pub fn synthesize_dataset(subjects: &[Subject], cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetSummary> {
    if subjects.is_empty() {
        return Err(CorruptionError::InvalidConfig("no subjects".into()));
    }
    if !(0.0..=1.0).contains(&cfg.drop_p) {
        return Err(CorruptionError::InvalidConfig(format!("drop_p {} outside [0, 1]", cfg.drop_p)));
    }
    cfg.corruption.validate()?;
    let mut ids: Vec<&str> = subjects.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != subjects.len() {
        return Err(CorruptionError::InvalidConfig("subject ids must be unique".into()));
    }
    let bridge = Bridge::new(cfg.bridge.clone()).map_err(|e| CorruptionError::InvalidConfig(e.to_string()))?;
    for sub in ["gt", "errors", "instructions"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let jobs = match cfg.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(subjects.len());

    let mut outputs: Vec<Option<Result<SubjectOutput>>> = (0..subjects.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> = (0..jobs)
            .map(|w| (w..subjects.len()).step_by(jobs).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| {
                let bridge = &bridge;
                scope.spawn(move || {
                    idx.into_iter()
                        .map(|i| (i, synthesize_subject(i, &subjects[i], cfg, out_dir, bridge)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("synthesis worker panicked") {
                outputs[i] = Some(r);
            }
        }
    });

    let manifest = out_dir.join("manifest.jsonl");
    let mut file = fs::File::create(&manifest).map_err(io_err(&manifest))?;
    let mut summary = DatasetSummary {
        manifest: manifest.clone(),
        samples: 0,
        records: 0,
        dropped: 0,
        failures: 0,
    };
    for out in outputs {
        for s in out.expect("every subject processed")?.samples {
            summary.samples += 1;
            summary.records += s.records.len();
            summary.dropped += s.records.iter().filter(|r| r.dropped).count();
            summary.failures += s.failures.len();
            let line = serde_json::to_string(&s).map_err(json_err(&manifest))?;
            writeln!(file, "{line}").map_err(io_err(&manifest))?;
        }
    }
    Ok(summary)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleTuple>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(json_err(path))?);
    }
    Ok(out)
}

/// Re-applies a sample's non-dropped records to its ground truth.
/// `manifest_dir` is the directory holding the manifest.
pub fn rebuild_error_volume(manifest_dir: &Path, t: &SampleTuple, cfg: &CorruptionConfig) -> Result<LabelVolume> {
    let gt = load_volume(&manifest_dir.join(&t.gt_path), t.format)?;
    let centerlines = load_centerlines(&manifest_dir.join(&t.centerlines_path), &gt)?;
    apply_records(&gt, &centerlines, &t.records, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_sizes() {
        let items: Vec<u32> = (0..13).collect();
        let p = partition_instructions(&items, 4).unwrap();
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3, 3]);
        assert_eq!(partition_instructions(&items, 1).unwrap(), vec![items.clone()]);
        assert!(partition_instructions(&items, 13).unwrap().iter().all(|l| l.len() == 1));
        assert!(partition_instructions(&items, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(5, &[2]), derive_seed(5, &[2]));
    }
}
