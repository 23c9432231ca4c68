//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Run with `cargo test -p forge-cli --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use forge_core::centerline::{select_span, span_mask, Anchor};
use forge_core::corruption::{
    annotate_record, apply_error, assign_drops, load_manifest, partition_instructions, rebuild_error_volume,
    sample_error, synthesize_dataset, CorruptionConfig, DatasetConfig, EditRecord, ErrorKind, Subject,
};
use forge_core::hash::content_hash;
use forge_core::instruction::{invert_record, parse_instruction, render_instruction, Vocabulary};
use forge_core::metrics::{chamfer, dice, nsd};
use forge_core::phantom::{Phantom, PhantomKind, TUBE_CLASS};
use forge_core::pipeline::round_trip;
use forge_core::refine::{replay, RefinementSession};
use forge_core::volume::{dilate, erode, rawl_to_parts, BinaryMask, BoundingBox, LabelVolume, StructuringElement};
use forge_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

const DICE_PRESERVING: f64 = 0.95;
const DICE_REMOVING: f64 = 0.90;
const ROUND_TRIP_BUDGET_S: f64 = 60.0;
const ORACLE_TOL: f64 = 1e-9;
const SPAN_SLACK_VOXELS: f64 = 2.0;
const DROP_P: f64 = 0.2;
const DROP_TOL: f64 = 0.01;
const PARTITION_TOL: f64 = 0.01;

const REMOVAL: [ErrorKind; 3] = [ErrorKind::Disconnect, ErrorKind::MissingSegment, ErrorKind::Shorten];
const LOCAL: [ErrorKind; 3] = [ErrorKind::LocalThicken, ErrorKind::LocalThin, ErrorKind::Fragment];

type Check = Result<String, String>;
/// Round-trip Dice per (kind, phantom, seed).
type Suite = Vec<(ErrorKind, PhantomKind, u64, f64)>;
type Named<'a> = (&'static str, Box<dyn FnOnce() -> Check + 'a>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Dice after corrupt, render, parse and refine, per (kind, phantom, seed).
fn round_trip_suite() -> Result<(Suite, f64), String> {
    let cfg = CorruptionConfig::default();
    let start = Instant::now();
    let mut out = Vec::new();
    for pk in PhantomKind::ALL {
        let p = Phantom::tube(pk);
        let c = &p.centerlines[&TUBE_CLASS];
        for kind in ErrorKind::ALL {
            for seed in 0..3 {
                let rt = round_trip(&p.volume, c, kind, seed, &cfg).map_err(|e| format!("{pk:?} {kind} {seed}: {e}"))?;
                ensure(rt.parse_exact, || format!("{pk:?} {kind} {seed}: inexact parse of {:?}", rt.instruction))?;
                out.push((kind, pk, seed, rt.dice_refined));
            }
        }
    }
    Ok((out, start.elapsed().as_secs_f64()))
}

fn round_trip_recovery(suite: &[(ErrorKind, PhantomKind, u64, f64)], secs: f64) -> Check {
    let failures: Vec<String> = suite
        .iter()
        .filter(|(k, _, _, d)| *d < if REMOVAL.contains(k) { DICE_REMOVING } else { DICE_PRESERVING })
        .map(|(k, p, s, d)| format!("{p:?}/{k}/{s}={d:.3}"))
        .collect();
    ensure(failures.is_empty(), || failures.join(", "))?;
    ensure(secs < ROUND_TRIP_BUDGET_S, || format!("took {secs:.1} s"))?;
    let min = suite.iter().map(|x| x.3).fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{} cases, min Dice {min:.3} (thresholds {DICE_PRESERVING}/{DICE_REMOVING}), {secs:.1} s < {ROUND_TRIP_BUDGET_S} s",
        suite.len()
    ))
}

fn removal_ordering(suite: &[(ErrorKind, PhantomKind, u64, f64)]) -> Check {
    let of = |set: &[ErrorKind]| mean(&suite.iter().filter(|x| set.contains(&x.0)).map(|x| x.3).collect::<Vec<_>>());
    let (removal, local) = (of(&REMOVAL), of(&LOCAL));
    ensure(removal <= local, || format!("removal {removal:.4} > local {local:.4}"))?;
    Ok(format!("removal mean {removal:.4} <= local mean {local:.4}"))
}

fn fuzz_string(rng: &mut ChaCha8Rng) -> String {
    const TOKENS: &[&str] = &[
        "thicken", "thin", "restore", "extend", "bridge", "the gap in", "consolidate", "remove", "the", "L-MCA", "BA",
        "Acom", "from", "to", "between", "and", "measured from the", "proximal", "distal", "end", "by a factor of",
        "by", "%", "mm", "to radius", "through", "In the", ",", ";", ".", "(", ")", "1.5", "-3", "1e400", "NaN", "40",
        "é", "漢", "\u{0}",
    ];
    let n = rng.random_range(0..24);
    let mut s = String::new();
    for _ in 0..n {
        match rng.random_range(0..10) {
            0 => s.push(char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?')),
            1 => s.push(rng.random_range(b' '..=b'~') as char),
            _ => {
                s.push_str(TOKENS[rng.random_range(0..TOKENS.len())]);
                s.push(' ');
            }
        }
    }
    s
}

fn grammar() -> Check {
    const SPANS: [[f64; 2]; 5] = [[0.0, 10.0], [12.5, 40.0], [40.0, 60.0], [86.0, 99.0], [3.0, 100.0]];
    const FACTORS: [f64; 4] = [1.2, 1.37, 1.5, 2.0];
    const PERCENTS: [f64; 4] = [5.0, 12.5, 25.0, 40.0];
    let vocab = Vocabulary::default();
    let mut texts = Vec::new();
    for (kind, class) in ErrorKind::ALL.into_iter().flat_map(|k| vocab.classes().map(move |c| (k, c))) {
        for anchor in [Anchor::Proximal, Anchor::Distal] {
            for span in SPANS {
                for m in 0..4 {
                    let mut r = EditRecord::new(kind, class, 0);
                    if kind.has_span() {
                        r.span = Some(span);
                        r.anchor = Some(anchor);
                    }
                    match kind {
                        ErrorKind::Shorten | ErrorKind::Disconnect => r.magnitude = Some(PERCENTS[m]),
                        ErrorKind::Fragment => {
                            r.magnitude = Some(3.0);
                            r.fragment_count = Some(2 + m as u32);
                        }
                        ErrorKind::MissingSegment => {}
                        _ => r.magnitude = Some(FACTORS[m]),
                    }
                    let doc = render_instruction(&r, &vocab).map_err(|e| e.to_string())?;
                    let parsed = parse_instruction(&doc.detailed, &vocab);
                    ensure(parsed.commands() == vec![invert_record(&r)] && parsed.is_ok(), || {
                        format!("{:?} parsed to {:?}", doc.detailed, parsed.commands())
                    })?;
                    texts.push(doc.detailed);
                }
            }
        }
    }
    texts.sort();
    texts.dedup();
    let cases = texts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    const FUZZ: usize = 100_000;
    for _ in 0..FUZZ {
        let text = fuzz_string(&mut rng);
        let parsed = catch_unwind(|| parse_instruction(&text, &vocab)).map_err(|_| format!("panic on {text:?}"))?;
        ensure(parsed.clauses.iter().all(|c| c.command.is_some() != c.error.is_some()), || {
            format!("clause neither parsed nor rejected in {text:?}")
        })?;
    }
    ensure(cases >= 400, || format!("only {cases} distinct grid cases"))?;
    Ok(format!("{cases} distinct grid cases round-trip exactly, {FUZZ} fuzzed strings without panic"))
}

fn random_mask(rng: &mut ChaCha8Rng, spacing: [f64; 3], p: f64) -> BinaryMask {
    let bits = (0..512).map(|_| rng.random_bool(p)).collect();
    BinaryMask::from_bits([8, 8, 8], spacing, bits).unwrap()
}

fn surface(m: &BinaryMask) -> Vec<[f64; 3]> {
    let (d, s) = (m.dims(), m.spacing());
    let inside = |c: [i64; 3]| (0..3).all(|a| c[a] >= 0 && c[a] < d[a] as i64) && m.get(c[0] as usize, c[1] as usize, c[2] as usize);
    let mut out = Vec::new();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let c = [x as i64, y as i64, z as i64];
                let edge = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                    .iter()
                    .any(|o| !inside([c[0] + o[0], c[1] + o[1], c[2] + o[2]]));
                if m.get(x, y, z) && edge {
                    out.push([x as f64 * s[0], y as f64 * s[1], z as f64 * s[2]]);
                }
            }
        }
    }
    out
}

fn nearest(p: &[f64; 3], set: &[[f64; 3]]) -> f64 {
    set.iter()
        .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let spacing = if case % 2 == 0 { [1.0; 3] } else { [0.7, 0.9, 1.3] };
        let (pa, pb) = (rng.random_range(0.05..0.7), rng.random_range(0.05..0.7));
        let (a, b) = (random_mask(&mut rng, spacing, pa), random_mask(&mut rng, spacing, pb));
        let (sa, sb) = (surface(&a), surface(&b));
        if sa.is_empty() || sb.is_empty() {
            continue;
        }
        let both = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count();
        let want_dice = 2.0 * both as f64 / (a.count() + b.count()) as f64;
        let da: Vec<f64> = sa.iter().map(|p| nearest(p, &sb)).collect();
        let db: Vec<f64> = sb.iter().map(|p| nearest(p, &sa)).collect();
        let want_chamfer = 0.5 * (mean(&da) + mean(&db));
        let mut errs = vec![
            (dice(&a, &b).unwrap() - want_dice).abs(),
            (chamfer(&a, &b).unwrap() - want_chamfer).abs(),
        ];
        let mut last = 0.0;
        for tau in [0.5, 1.0, 2.0] {
            let within = da.iter().chain(&db).filter(|d| **d <= tau).count();
            let got = nsd(&a, &b, tau).unwrap();
            errs.push((got - within as f64 / (da.len() + db.len()) as f64).abs());
            ensure(got >= last, || format!("NSD not monotone in tau, case {case}"))?;
            last = got;
        }
        let e = errs.into_iter().fold(0.0, f64::max);
        ensure(e <= ORACLE_TOL, || format!("case {case}: error {e:e}"))?;
        worst = worst.max(e);

        ensure(dice(&a, &a).unwrap() == 1.0 && nsd(&a, &a, 1.0).unwrap() == 1.0 && chamfer(&a, &a).unwrap() == 0.0, || {
            format!("identity fails, case {case}")
        })?;
        ensure(
            dice(&a, &b).unwrap() == dice(&b, &a).unwrap()
                && (nsd(&a, &b, 1.0).unwrap() - nsd(&b, &a, 1.0).unwrap()).abs() <= 1e-12
                && (chamfer(&a, &b).unwrap() - chamfer(&b, &a).unwrap()).abs() <= 1e-12,
            || format!("symmetry fails, case {case}"),
        )?;
    }
    Ok(format!("100 pairs, max |error| {worst:.1e} <= {ORACLE_TOL:e}, NSD monotone over tau in {{0.5, 1, 2}}"))
}

/// `m` inside a grid grown by `pad` per side, plus the window back onto `m`.
fn padded(m: &BinaryMask, pad: usize) -> (BinaryMask, BoundingBox) {
    let d = m.dims();
    let dims = [d[0] + 2 * pad, d[1] + 2 * pad, d[2] + 2 * pad];
    let mut out = BinaryMask::empty(dims, m.spacing());
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                out.set(x + pad, y + pad, z + pad, m.get(x, y, z));
            }
        }
    }
    let mut window = BinaryMask::empty(dims, m.spacing());
    window.set(pad, pad, pad, true);
    window.set(pad + d[0] - 1, pad + d[1] - 1, pad + d[2] - 1, true);
    (out, window.bounding_box().unwrap())
}

fn morphology_laws() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3035);
    for case in 0..200 {
        let p = rng.random_range(0.1..0.9);
        let m = random_mask(&mut rng, [1.0; 3], p);
        let se = StructuringElement::ball([1.0, 1.5, 2.0, 2.3][case % 4]).unwrap();
        let (dil, ero) = (dilate(&m, &se), erode(&m, &se));
        ensure(m.is_subset_of(&dil), || format!("extensivity, case {case}"))?;
        ensure(ero.is_subset_of(&m), || format!("anti-extensivity, case {case}"))?;
        ensure(dilate(&ero, &se).is_subset_of(&m), || format!("opening bound, case {case}"))?;
        let (big, window) = padded(&m, 2 * se.radius().ceil() as usize);
        ensure(m.is_subset_of(&erode(&dilate(&big, &se), &se).crop(&window)), || format!("closing bound, case {case}"))?;
        ensure(ero == dilate(&big.complement(), &se).complement().crop(&window), || format!("duality, case {case}"))?;
    }
    Ok("200 masks: extensivity, anti-extensivity, opening/closing bounds, duality".into())
}

fn span_geometry() -> Check {
    let p = Phantom::straight_101();
    let c = &p.centerlines[&TUBE_CLASS];
    let span = select_span(c, 86.0, 99.0, Anchor::Proximal).map_err(|e| e.to_string())?;
    ensure(span == (86..=99).collect::<Vec<_>>(), || format!("selected {span:?}"))?;
    let mask = span_mask(&p.volume, c, &span, 1.5).map_err(|e| e.to_string())?;
    let (lo, hi) = (c.nodes()[86][0], c.nodes()[99][0]);
    let g = mask.grid();
    let outside = mask
        .indices()
        .map(|i| g.coords(i)[0] as f64)
        .filter(|&x| x < lo - SPAN_SLACK_VOXELS || x > hi + SPAN_SLACK_VOXELS)
        .count();
    ensure(outside == 0 && mask.count() > 0, || format!("{outside} voxels outside x in [{lo}, {hi}] +- {SPAN_SLACK_VOXELS}"))?;
    Ok(format!("nodes 86..=99, {} mask voxels within x in [{lo}, {hi}] +- {SPAN_SLACK_VOXELS}", mask.count()))
}

fn dataset() -> Check {
    let subjects = vec![Subject::from_phantom(Phantom::cow(1)), Subject::from_phantom(Phantom::cow(2))];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = DatasetConfig {
        seed: 42,
        ..Default::default()
    };
    let summary = synthesize_dataset(&subjects, &cfg, dir.path()).map_err(|e| e.to_string())?;
    let samples = load_manifest(&summary.manifest).map_err(|e| e.to_string())?;
    ensure(samples.len() == 30, || format!("{} variants", samples.len()))?;
    for sub in ["cow_1", "cow_2"] {
        let n = samples.iter().filter(|s| s.subject_id == sub).count();
        ensure(n == 15, || format!("{sub}: {n} variants"))?;
    }
    for s in &samples {
        let stored = forge_core::volume::load_volume(&dir.path().join(&s.error_path), s.format).map_err(|e| e.to_string())?;
        let rebuilt = rebuild_error_volume(dir.path(), s, &cfg.corruption).map_err(|e| e.to_string())?;
        ensure(stored.labels() == rebuilt.labels(), || format!("{} v{} rebuild differs", s.subject_id, s.variant_id))?;
    }
    let mut records: Vec<EditRecord> = (0..10_000).map(|i| EditRecord::new(ErrorKind::MissingSegment, 1, i)).collect();
    assign_drops(&mut records, DROP_P, &mut ChaCha8Rng::seed_from_u64(0xd209));
    let frac = records.iter().filter(|r| r.dropped).count() as f64 / records.len() as f64;
    ensure((frac - DROP_P).abs() <= DROP_TOL, || format!("dropped fraction {frac}"))?;
    Ok(format!("30 variants (15 + 15), rebuild bit-identical, dropped fraction {frac:.4} within {DROP_P} +- {DROP_TOL}"))
}

/// Circle-of-Willis phantom with one error on each of its 13 segments, and
/// the detailed instruction for each.
fn thirteen_error_phantom(p: &Phantom) -> Result<(LabelVolume, Vec<String>), String> {
    let vocab = Vocabulary::from_label_map(p.volume.label_map());
    let mut current = p.volume.clone();
    let mut texts = Vec::new();
    for (i, (&class, c)) in p.centerlines.iter().enumerate() {
        let applied = (0..ErrorKind::ALL.len()).find_map(|k| {
            let cfg = CorruptionConfig {
                kinds: vec![ErrorKind::ALL[(i + k) % ErrorKind::ALL.len()]],
                ..Default::default()
            };
            let r = sample_error(&mut ChaCha8Rng::seed_from_u64(class as u64), class, &cfg).ok()?;
            let r = annotate_record(&r, c, &p.volume).ok()?;
            Some((apply_error(&current, c, &r, &cfg).ok()?, r))
        });
        let (v, r) = applied.ok_or_else(|| format!("no kind applies to segment {class}"))?;
        current = v;
        texts.push(render_instruction(&r, &vocab).map_err(|e| e.to_string())?.detailed);
    }
    Ok((current, texts))
}

fn iterative() -> Check {
    let p = Phantom::cow(7);
    let (err, texts) = thirteen_error_phantom(&p)?;
    ensure(texts.len() == 13, || format!("{} errors", texts.len()))?;
    let final_dice = |s: &RefinementSession| s.last_step().metrics.as_ref().map(|m| m.macro_dice).unwrap_or(0.0);

    let mut single = RefinementSession::new("single", err.clone(), Some(p.volume.clone())).map_err(|e| e.to_string())?;
    single.refine_step(&texts.join(" ")).map_err(|e| e.to_string())?;
    let mut split = RefinementSession::new("split", err.clone(), Some(p.volume.clone())).map_err(|e| e.to_string())?;
    for part in partition_instructions(&texts, 4).map_err(|e| e.to_string())? {
        split.refine_step(&part.join(" ")).map_err(|e| e.to_string())?;
    }
    let (a, b) = (final_dice(&single), final_dice(&split));
    ensure((a - b).abs() <= PARTITION_TOL, || format!("split {b:.4} vs single {a:.4}"))?;
    let replayed = replay(&err, split.history(), &Default::default()).map_err(|e| e.to_string())?;
    ensure(content_hash(&replayed) == split.hash(), || "replay hash differs".into())?;
    Ok(format!(
        "K=4 Dice {b:.4} vs single-shot {a:.4} (|diff| <= {PARTITION_TOL}), {} step hashes replay",
        split.history().len()
    ))
}

async fn send(app: &Router, req: Request<Body>) -> Result<(StatusCode, Value), String> {
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes();
    Ok((status, serde_json::from_slice(&bytes).unwrap_or(Value::Null)))
}

fn upload(v: &LabelVolume) -> Request<Body> {
    const B: &str = "acceptance-boundary";
    let (h, b) = rawl_to_parts(v);
    let mut body = Vec::new();
    for (name, bytes) in [("header", &h), ("body", &b)] {
        body.extend_from_slice(format!("--{B}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes());
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{B}--\r\n").as_bytes());
    Request::post("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={B}"))
        .body(Body::from(body))
        .unwrap()
}

fn post(uri: String, body: Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn create(app: &Router, v: &LabelVolume) -> Result<String, String> {
    let (status, body) = send(app, upload(v)).await?;
    ensure(status == StatusCode::CREATED, || format!("create: {status} {body}"))?;
    Ok(body["session_id"].as_str().unwrap_or_default().to_string())
}

async fn run_script(app: &Router, id: &str, script: &[&str]) -> Result<Vec<String>, String> {
    let mut hashes = Vec::new();
    for text in script {
        let (status, step) = send(app, post(format!("/sessions/{id}/instructions"), json!({"text": text}))).await?;
        ensure(status == StatusCode::OK, || format!("{text:?}: {status} {step}"))?;
        hashes.push(step["hash"].as_str().unwrap_or_default().to_string());
    }
    Ok(hashes)
}

fn reference_hashes(v: &LabelVolume, script: &[&str]) -> Result<Vec<String>, String> {
    let mut s = RefinementSession::new("ref", v.clone(), None).map_err(|e| e.to_string())?;
    script
        .iter()
        .map(|t| s.refine_step(t).map(|st| st.hash.clone()).map_err(|e| e.to_string()))
        .collect()
}

async fn service_checks() -> Check {
    let app = router(AppState::new(ServiceConfig::default()).map_err(|e| e.to_string())?);
    let p = Phantom::cow(1);
    let mut r = EditRecord::new(ErrorKind::Disconnect, 2, 0);
    r.span = Some([40.0, 60.0]);
    r.anchor = Some(Anchor::Proximal);
    r.magnitude = Some(20.0);
    let fixture = apply_error(&p.volume, &p.centerlines[&2], &r, &CorruptionConfig::default()).map_err(|e| e.to_string())?;
    let script = [
        "Bridge the gap in the R-PCA between 40% and 60%.",
        "Thicken the L-MCA by a factor of 1.2.",
        "Thin the BA from 20% to 70% measured from the proximal end by a factor of 1.3.",
    ];

    let id = create(&app, &fixture).await?;
    let first = run_script(&app, &id, &script).await?;
    let (status, body) = send(&app, post(format!("/sessions/{id}/rollback"), json!({"step": 1}))).await?;
    ensure(status == StatusCode::OK && body["hash"] == first[0].as_str(), || format!("rollback: {status} {body}"))?;
    let again = run_script(&app, &id, &script[1..]).await?;
    ensure(again.last() == first.last(), || format!("resubmitted {again:?} vs {first:?}"))?;

    let other = Phantom::cow(5).volume;
    let other_script = [
        "Thin the L-ICA by a factor of 1.3.",
        "Remove the Acom.",
        "Thicken the R-MCA from 10% to 50% measured from the distal end by a factor of 1.4.",
    ];
    let (a, b) = (create(&app, &fixture).await?, create(&app, &other).await?);
    let (ta, tb) = {
        let (app_a, app_b) = (app.clone(), app.clone());
        let ha = tokio::spawn(async move { run_script(&app_a, &a, &script).await });
        let hb = tokio::spawn(async move { run_script(&app_b, &b, &other_script).await });
        (ha.await.map_err(|e| e.to_string())??, hb.await.map_err(|e| e.to_string())??)
    };
    ensure(ta == reference_hashes(&fixture, &script)?, || "session A hashes diverge".into())?;
    ensure(tb == reference_hashes(&other, &other_script)?, || "session B hashes diverge".into())?;
    Ok("rollback(1) + resubmit reproduces the final hash; 2 concurrent sessions match in-process hashes".into())
}

fn service() -> Check {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(service_checks())
}

fn main() {
    let (suite, secs) = match catch_unwind(round_trip_suite) {
        Ok(Ok(x)) => x,
        Ok(Err(e)) => (Vec::new(), {
            eprintln!("round-trip suite: {e}");
            f64::INFINITY
        }),
        Err(_) => (Vec::new(), f64::INFINITY),
    };
    let have_suite = !suite.is_empty();
    let checks: Vec<Named> = vec![
        (
            "round-trip recovery",
            Box::new(|| if have_suite { round_trip_recovery(&suite, secs) } else { Err("suite did not run".into()) }),
        ),
        (
            "removal-vs-preservation ordering",
            Box::new(|| if have_suite { removal_ordering(&suite) } else { Err("suite did not run".into()) }),
        ),
        ("grammar totality and round trip", Box::new(grammar)),
        ("metric oracles", Box::new(metric_oracles)),
        ("morphology laws", Box::new(morphology_laws)),
        ("span geometry", Box::new(span_geometry)),
        ("dataset pipeline", Box::new(dataset)),
        ("iterative contract", Box::new(iterative)),
        ("service integration", Box::new(service)),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
