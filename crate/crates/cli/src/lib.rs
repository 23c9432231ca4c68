//! The `forge` command line. [`run_cli`] parses arguments, dispatches, and
//! maps failures onto exit codes: 0 ok, 1 usage, 2 data error, 3 internal.
//! Results go to stdout as JSON; `--verbose` adds human tables on stderr.

mod config;

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use forge_core::centerline::{Centerline, CenterlineJson};
use forge_core::corruption::{
    annotate_record, apply_error, load_manifest, partition_instructions, synthesize_dataset, CorruptionConfig,
    DatasetConfig, EditRecord, Subject,
};
use forge_core::hash::content_hash;
use forge_core::instruction::{parse_instruction, render_instruction, Granularity, InstructionDoc, Vocabulary};
use forge_core::llm_bridge::{BridgeConfig, BridgeMode};
use forge_core::metrics::{by_error_kind, evaluate, grouped_csv, report_csv, EvalConfig, GroupedSample, MetricsReport};
use forge_core::phantom::{Phantom, PhantomKind};
use forge_core::refine::RefinementSession;
use forge_core::volume::{load_volume, save_volume, LabelVolume, VolumeFormat};
use forge_service::ServiceConfig;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Synthesize, instruct, refine and score vessel segmentations")]
struct Cli {
    /// Flat TOML file of flag defaults (`flag-name = value`); flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Human-readable tables on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Paraphrase {
    Mock,
    Live,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Rawl,
    Nifti,
}

impl From<Format> for VolumeFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Rawl => VolumeFormat::Rawl,
            Format::Nifti => VolumeFormat::Nifti,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Detail {
    Concise,
    Detailed,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write erroneous variants, instructions and a manifest for every
    /// subject volume in a directory.
    Synth {
        #[arg(long)]
        subjects: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 15)]
        variants: usize,
        #[arg(long, default_value_t = 0.2)]
        drop_p: f64,
        #[arg(long, value_enum, default_value_t = Paraphrase::Off)]
        paraphrase: Paraphrase,
        /// Fixture directory for `--paraphrase mock`.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Worker threads over subjects; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, value_enum, default_value_t = Format::Rawl)]
        format: Format,
    },
    /// Apply one error record to a ground-truth volume.
    Corrupt {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        centerlines: PathBuf,
        /// Record as inline JSON or a path to a JSON file.
        #[arg(long)]
        record: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the narrative and corrective instructions for a record.
    Instruct {
        #[arg(long)]
        record: String,
        #[arg(long, value_enum)]
        granularity: Option<Detail>,
    },
    /// Parse instruction text into commands.
    Parse {
        #[arg(long)]
        text: String,
    },
    /// Apply instructions to a volume, or to every sample of a manifest.
    Refine {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// One instruction per line; blank lines and `#` comments skipped.
        #[arg(long)]
        instructions: Option<PathBuf>,
        /// Split the instructions round-robin into this many steps.
        #[arg(long)]
        k_partitions: Option<usize>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the step history as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Refine every sample of this manifest with its detailed instructions.
        #[arg(long, conflicts_with_all = ["input", "instructions", "out", "gt"])]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        out_dir: Option<PathBuf>,
    },
    /// Score a prediction against ground truth.
    Eval {
        /// Predicted volume, or with `--group-by-kind` the directory of
        /// refined samples written by `refine --manifest`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, required_unless_present = "group_by_kind")]
        gt: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        tau_mm: f64,
        #[arg(long)]
        group_by_kind: Option<PathBuf>,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        capacity: usize,
        #[arg(long)]
        max_voxels: Option<usize>,
    },
    /// Write a synthetic phantom and its centerlines. `--seed` picks the
    /// circle-of-Willis variant.
    Phantom {
        /// cow, straight_101, or a tube: straight, l_shape, helix, arc, s_curve.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Rawl)]
        format: Format,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::overlay(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", usage(e));
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    eprintln!("seed: {}", cli.seed);
    match dispatch(&cli) {
        Ok(out) => {
            // A closed pipe (`forge ... | head`) is not a failure.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out).expect("json"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Synth {
            subjects,
            out,
            variants,
            drop_p,
            paraphrase,
            fixtures,
            jobs,
            format,
        } => {
            let bridge = match paraphrase {
                Paraphrase::Off => BridgeConfig::default(),
                Paraphrase::Mock => BridgeConfig::mock(fixtures.clone().ok_or_else(|| usage("--paraphrase mock needs --fixtures"))?),
                Paraphrase::Live => {
                    let cfg = BridgeConfig::from_env();
                    if cfg.mode != BridgeMode::Live {
                        return Err(usage("--paraphrase live needs COWTALK_LLM_URL and COWTALK_LLM_KEY"));
                    }
                    cfg
                }
            };
            let cfg = DatasetConfig {
                variants_per_subject: *variants,
                drop_p: *drop_p,
                seed: cli.seed,
                format: (*format).into(),
                jobs: *jobs,
                bridge,
                ..Default::default()
            };
            synth(subjects, out, &cfg, cli.verbose)
        }
        Command::Corrupt {
            gt,
            centerlines,
            record,
            out,
        } => corrupt(gt, centerlines, record, out),
        Command::Instruct { record, granularity } => {
            let r = read_record(record)?;
            let doc = render_instruction(&r, &Vocabulary::default()).map_err(data)?;
            Ok(match granularity {
                None => serde_json::to_value(&doc).expect("json"),
                Some(g) => {
                    let g = match g {
                        Detail::Concise => Granularity::Concise,
                        Detail::Detailed => Granularity::Detailed,
                    };
                    json!({"granularity": g, "text": doc.text(g), "narrative": doc.narrative})
                }
            })
        }
        Command::Parse { text } => {
            let parsed = parse_instruction(text, &Vocabulary::default());
            let errors = parsed.errors();
            if !errors.is_empty() {
                let msgs: Vec<String> = errors.iter().map(ToString::to_string).collect();
                return Err(CliError::Data(msgs.join("; ")));
            }
            Ok(json!({"commands": parsed.commands()}))
        }
        Command::Refine {
            input,
            instructions,
            k_partitions,
            gt,
            out,
            history,
            manifest,
            out_dir,
        } => match manifest {
            Some(m) => {
                let dir = out_dir.as_ref().ok_or_else(|| usage("--manifest needs --out-dir"))?;
                refine_manifest(m, dir, *k_partitions)
            }
            None => {
                let need = |o: &Option<PathBuf>, flag: &str| o.clone().ok_or_else(|| usage(format!("refine needs {flag}")));
                let (input, instructions, out) = (need(input, "--in")?, need(instructions, "--instructions")?, need(out, "--out")?);
                refine_one(&input, &instructions, *k_partitions, gt.as_deref(), &out, history.as_deref())
            }
        },
        Command::Eval {
            pred,
            gt,
            tau_mm,
            group_by_kind,
        } => {
            let cfg = EvalConfig {
                nsd_tau_mm: *tau_mm,
                ..Default::default()
            };
            match group_by_kind {
                Some(m) => eval_grouped(pred, m, &cfg, cli.verbose),
                None => {
                    let gt = gt.as_ref().expect("clap requires --gt");
                    let report = evaluate(&read_volume(pred)?, &read_volume(gt)?, &cfg).map_err(data)?;
                    if cli.verbose {
                        eprint!("{}", report_csv(&report));
                    }
                    Ok(serde_json::to_value(report).expect("json"))
                }
            }
        }
        Command::Serve {
            addr,
            snapshot,
            capacity,
            max_voxels,
        } => {
            let addr = addr.parse().map_err(|e| usage(format!("--addr {addr}: {e}")))?;
            let mut cfg = ServiceConfig {
                capacity: *capacity,
                snapshot_dir: snapshot.clone(),
                bridge: BridgeConfig::from_env(),
                ..Default::default()
            };
            if let Some(m) = max_voxels {
                cfg.max_voxels = *m;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            eprintln!("listening on {addr}");
            rt.block_on(forge_service::serve(addr, cfg)).map_err(|e| CliError::Internal(e.to_string()))?;
            Ok(json!({"stopped": true}))
        }
        Command::Phantom { kind, out, format } => phantom(kind, cli.seed, out, (*format).into()),
    }
}

fn format_of(path: &Path) -> Result<VolumeFormat> {
    VolumeFormat::from_path(path)
        .ok_or_else(|| usage(format!("{}: expected a .nii, .nii.gz or .rawl volume path", path.display())))
}

fn read_volume(path: &Path) -> Result<LabelVolume> {
    load_volume(path, format_of(path)?).map_err(data)
}

fn write_volume(v: &LabelVolume, path: &Path) -> Result<()> {
    let format = format_of(path)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(data)?;
    }
    save_volume(v, path, format).map_err(data)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read_record(arg: &str) -> Result<EditRecord> {
    let r: EditRecord = if arg.trim_start().starts_with('{') {
        serde_json::from_str(arg).map_err(data)?
    } else {
        read_json(Path::new(arg))?
    };
    r.validate().map_err(data)?;
    Ok(r)
}

/// Volumes in `dir` (`*.rawl.json`, `*.nii`, `*.nii.gz`), by file name. A
/// `<stem>.centerlines.json` next to a volume supplies its centerlines;
/// otherwise they are extracted from the labels.
fn load_subjects(dir: &Path) -> Result<(Vec<Subject>, Vec<Value>)> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut subjects = Vec::new();
    let mut failures = Vec::new();
    for path in entries {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(stem) = [".rawl.json", ".nii.gz", ".nii"].iter().find_map(|s| name.strip_suffix(s)) else {
            continue;
        };
        let volume = read_volume(&path)?;
        let cl_path = dir.join(format!("{stem}.centerlines.json"));
        if cl_path.exists() {
            let list: Vec<CenterlineJson> = read_json(&cl_path)?;
            let centerlines = list
                .iter()
                .map(|j| Ok((j.segment_id, Centerline::from_json(j, &volume).map_err(data)?)))
                .collect::<Result<_>>()?;
            subjects.push(Subject {
                id: stem.to_string(),
                volume,
                centerlines,
            });
        } else {
            let (s, f) = Subject::from_volume(stem, volume, &Default::default());
            for x in f {
                failures.push(json!({"subject": stem, "failure": x}));
            }
            subjects.push(s);
        }
    }
    if subjects.is_empty() {
        return Err(data(format!("no subject volumes in {}", dir.display())));
    }
    Ok((subjects, failures))
}

fn synth(subjects: &Path, out: &Path, cfg: &DatasetConfig, verbose: bool) -> Result<Value> {
    let (subjects, centerline_failures) = load_subjects(subjects)?;
    fs::create_dir_all(out).map_err(data)?;
    let summary = synthesize_dataset(&subjects, cfg, out).map_err(data)?;
    if verbose {
        eprintln!("subjects  samples  records  dropped  failures");
        eprintln!(
            "{:>8}  {:>7}  {:>7}  {:>7}  {:>8}",
            subjects.len(),
            summary.samples,
            summary.records,
            summary.dropped,
            summary.failures
        );
    }
    Ok(json!({"summary": summary, "centerline_failures": centerline_failures}))
}

fn corrupt(gt: &Path, centerlines: &Path, record: &str, out: &Path) -> Result<Value> {
    let r = read_record(record)?;
    let gt = read_volume(gt)?;
    let list: Vec<CenterlineJson> = read_json(centerlines)?;
    let j = list
        .iter()
        .find(|j| j.segment_id == r.segment_id)
        .ok_or_else(|| data(format!("no centerline for segment {}", r.segment_id)))?;
    let c = Centerline::from_json(j, &gt).map_err(data)?;
    let v = apply_error(&gt, &c, &r, &CorruptionConfig::default()).map_err(data)?;
    let annotated = annotate_record(&r, &c, &gt).map_err(data)?;
    write_volume(&v, out)?;
    Ok(json!({"out": out, "hash": content_hash(&v), "record": annotated}))
}

/// Groups instruction texts into steps: one per text, or `k` round-robin
/// partitions.
fn steps(texts: &[String], k: Option<usize>) -> Result<Vec<String>> {
    match k {
        None => Ok(texts.to_vec()),
        Some(k) => Ok(partition_instructions(texts, k)
            .map_err(usage)?
            .into_iter()
            .filter(|p| !p.is_empty())
            .map(|p| p.join("; "))
            .collect()),
    }
}

fn run_session(session: &mut RefinementSession, steps: &[String]) -> Vec<Value> {
    steps
        .iter()
        .map(|text| match session.refine_step(text) {
            Ok(step) => json!({"text": text, "hash": step.hash, "commands": step.commands.len(),
                "clause_errors": step.clause_errors, "command_errors": step.command_errors}),
            Err(e) => json!({"text": text, "rejected": e.to_string()}),
        })
        .collect()
}

fn refine_one(
    input: &Path,
    instructions: &Path,
    k: Option<usize>,
    gt: Option<&Path>,
    out: &Path,
    history: Option<&Path>,
) -> Result<Value> {
    let v = read_volume(input)?;
    let gt = gt.map(read_volume).transpose()?;
    let text = fs::read_to_string(instructions).map_err(|e| data(format!("{}: {e}", instructions.display())))?;
    let lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    let mut session = RefinementSession::new("cli", v, gt).map_err(data)?;
    let log = run_session(&mut session, &steps(&lines, k)?);
    write_volume(session.current(), out)?;
    if let Some(h) = history {
        fs::write(h, serde_json::to_vec_pretty(session.history()).expect("json")).map_err(data)?;
    }
    Ok(json!({"out": out, "hash": session.hash(), "steps": log, "metrics": session.last_step().metrics}))
}

fn refined_path(out_dir: &Path, error_path: &str) -> PathBuf {
    out_dir.join(Path::new(error_path).file_name().unwrap_or_default())
}

fn refine_manifest(manifest: &Path, out_dir: &Path, k: Option<usize>) -> Result<Value> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let samples = load_manifest(manifest).map_err(data)?;
    fs::create_dir_all(out_dir).map_err(data)?;
    let mut results = Vec::new();
    for s in &samples {
        let v = load_volume(&root.join(&s.error_path), s.format).map_err(data)?;
        let texts: Vec<String> = s
            .instruction_docs
            .iter()
            .map(|p| read_json::<InstructionDoc>(&root.join(p)).map(|d| d.detailed))
            .collect::<Result<_>>()?;
        let mut session = RefinementSession::new(format!("{}_v{:02}", s.subject_id, s.variant_id), v, None).map_err(data)?;
        // Default: the whole sample in one step.
        let grouped = match k {
            Some(_) => steps(&texts, k)?,
            None => vec![texts.join("; ")],
        };
        let log = run_session(&mut session, &grouped);
        let out = refined_path(out_dir, &s.error_path);
        save_volume(session.current(), &out, s.format).map_err(data)?;
        results.push(json!({"subject_id": s.subject_id, "variant_id": s.variant_id, "out": out,
            "hash": session.hash(), "steps": log.len()}));
    }
    Ok(json!({"samples": results.len(), "out_dir": out_dir, "results": results}))
}

fn eval_grouped(pred_dir: &Path, manifest: &Path, cfg: &EvalConfig, verbose: bool) -> Result<Value> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let samples = load_manifest(manifest).map_err(data)?;
    let mut reports: Vec<(MetricsReport, MetricsReport)> = Vec::new();
    for s in &samples {
        let gt = load_volume(&root.join(&s.gt_path), s.format).map_err(data)?;
        let input = load_volume(&root.join(&s.error_path), s.format).map_err(data)?;
        let refined = load_volume(&refined_path(pred_dir, &s.error_path), s.format).map_err(data)?;
        reports.push((
            evaluate(&input, &gt, cfg).map_err(data)?,
            evaluate(&refined, &gt, cfg).map_err(data)?,
        ));
    }
    let grouped: Vec<GroupedSample<'_>> = samples
        .iter()
        .zip(&reports)
        .map(|(s, (input, refined))| GroupedSample {
            records: &s.records,
            input,
            refined,
        })
        .collect();
    let groups = by_error_kind(&grouped);
    if verbose {
        eprint!("{}", grouped_csv(&groups));
    }
    let n = reports.len().max(1) as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    Ok(json!({
        "samples": reports.len(),
        "macro_dice": mean(&|r| r.macro_dice),
        "macro_nsd": mean(&|r| r.macro_nsd),
        "detection_f1": mean(&|r| r.detection_f1),
        "micro_f1": mean(&|r| r.micro_f1),
        "nsd_tau_mm": cfg.nsd_tau_mm,
        "by_error_kind": groups,
    }))
}

fn phantom(kind: &str, seed: u64, out: &Path, format: VolumeFormat) -> Result<Value> {
    let p = match kind {
        "cow" => Phantom::cow(seed),
        "straight_101" => Phantom::straight_101(),
        other => {
            let k = PhantomKind::ALL
                .into_iter()
                .find(|k| k.name() == other)
                .ok_or_else(|| usage(format!("unknown phantom kind {other:?}")))?;
            Phantom::tube(k)
        }
    };
    fs::create_dir_all(out).map_err(data)?;
    let volume_path = match format {
        VolumeFormat::Rawl => out.join(format!("{}.rawl", p.name)),
        VolumeFormat::Nifti => out.join(format!("{}.nii.gz", p.name)),
    };
    save_volume(&p.volume, &volume_path, format).map_err(data)?;
    let cl_path = out.join(format!("{}.centerlines.json", p.name));
    let list: Vec<CenterlineJson> = p.centerlines.values().map(Centerline::to_json).collect();
    fs::write(&cl_path, serde_json::to_vec_pretty(&list).expect("json")).map_err(data)?;
    Ok(json!({"name": p.name, "volume": volume_path, "centerlines": cl_path, "hash": content_hash(&p.volume)}))
}
