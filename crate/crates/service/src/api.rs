use std::collections::BTreeMap;
use std::path::PathBuf;

use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::Json;
use forge_core::instruction::{parse_instruction, ClauseError, EditCommand};
use forge_core::metrics::MetricsReport;
use forge_core::refine::{CommandFailure, HistoryStep, RefinementSession};
use forge_core::volume::{
    connected_components, load_volume, nifti_from_bytes, rawl_from_parts, surface_points, Connectivity, LabelVolume,
    RawlHeader, VolumeFormat,
};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::store::{new_session_id, SharedSession};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub hash: String,
    /// Index of the latest history entry.
    pub step: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub label_map: BTreeMap<u8, String>,
    pub class_counts: BTreeMap<u8, usize>,
    pub metrics: Option<MetricsReport>,
}

fn summary(s: &RefinementSession) -> SessionSummary {
    let v = s.current();
    SessionSummary {
        session_id: s.session_id().to_string(),
        hash: s.hash().to_string(),
        step: s.history().len() - 1,
        dims: v.dims(),
        spacing: v.spacing(),
        label_map: v.label_map().clone(),
        class_counts: v.class_counts(),
        metrics: s.last_step().metrics.clone(),
    }
}

/// Runs CPU-bound session work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

#[derive(Debug, Deserialize)]
struct CreateFromPaths {
    path: PathBuf,
    #[serde(default)]
    gt_path: Option<PathBuf>,
}

fn check_size(voxels: usize, cap: usize) -> ApiResult<()> {
    if voxels > cap {
        Err(ApiError::TooLarge { voxels, cap })
    } else {
        Ok(())
    }
}

fn bad(e: impl std::fmt::Display) -> ApiError {
    ApiError::BadRequest(e.to_string())
}

fn load_path(path: &std::path::Path) -> ApiResult<LabelVolume> {
    let format = VolumeFormat::from_path(path).ok_or_else(|| bad(format!("unrecognized volume file {}", path.display())))?;
    load_volume(path, format).map_err(bad)
}

/// Uploaded parts for one volume: a rawl header and body, or NIfTI bytes.
#[derive(Default)]
struct Upload {
    header: Option<Vec<u8>>,
    body: Option<Vec<u8>>,
    nifti: Option<Vec<u8>>,
}

impl Upload {
    fn is_empty(&self) -> bool {
        self.header.is_none() && self.body.is_none() && self.nifti.is_none()
    }

    fn decode(self, what: &str, label_map: Option<&BTreeMap<u8, String>>, cap: usize) -> ApiResult<LabelVolume> {
        let ctx = |e: forge_core::volume::VolumeError| bad(format!("{what}: {e}"));
        match (self.header, self.body, self.nifti) {
            (Some(h), Some(b), None) => {
                if let Ok(parsed) = serde_json::from_slice::<RawlHeader>(&h) {
                    check_size(parsed.dims.iter().product(), cap)?;
                }
                rawl_from_parts(&h, &b).map_err(ctx)
            }
            (None, None, Some(n)) => {
                let v = nifti_from_bytes(&n, label_map.cloned()).map_err(ctx)?;
                check_size(v.len(), cap)?;
                Ok(v)
            }
            _ => Err(bad(format!("{what}: send either a rawl header and body or NIfTI bytes"))),
        }
    }
}

async fn read_multipart(mut mp: Multipart, cap: usize) -> ApiResult<(LabelVolume, Option<LabelVolume>)> {
    let (mut volume, mut gt) = (Upload::default(), Upload::default());
    let mut label_map = None;
    while let Some(field) = mp.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(bad)?.to_vec();
        match name.as_str() {
            "header" => volume.header = Some(bytes),
            "body" => volume.body = Some(bytes),
            "volume" => volume.nifti = Some(bytes),
            "gt_header" => gt.header = Some(bytes),
            "gt_body" => gt.body = Some(bytes),
            "gt" => gt.nifti = Some(bytes),
            "label_map" => label_map = Some(serde_json::from_slice::<BTreeMap<u8, String>>(&bytes).map_err(bad)?),
            other => return Err(bad(format!("unexpected form field {other:?}"))),
        }
    }
    let v = volume.decode("volume", label_map.as_ref(), cap)?;
    let g = if gt.is_empty() {
        None
    } else {
        Some(gt.decode("gt", label_map.as_ref(), cap)?)
    };
    Ok((v, g))
}

/// `POST /sessions`: multipart upload (`header` + `body` or `volume`, with
/// optional `gt_header` + `gt_body` or `gt`, and `label_map` for NIfTI), or
/// a JSON body `{"path", "gt_path"}` naming server-side files.
pub async fn create_session(State(st): State<AppState>, req: Request) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let cap = st.config.max_voxels;
    let is_json = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.starts_with("application/json"));
    let (volume, gt) = if is_json {
        let Json(body) = Json::<CreateFromPaths>::from_request(req, &st).await.map_err(bad)?;
        blocking(move || {
            let v = load_path(&body.path)?;
            check_size(v.len(), cap)?;
            let g = body.gt_path.as_deref().map(load_path).transpose()?;
            Ok((v, g))
        })
        .await?
    } else {
        let mp = Multipart::from_request(req, &st).await.map_err(bad)?;
        read_multipart(mp, cap).await?
    };
    let store = st.store.clone();
    let eval = st.config.eval.clone();
    let out = blocking(move || {
        let session = RefinementSession::with_config(new_session_id(), volume, gt, Default::default(), eval).map_err(bad)?;
        let s = summary(&session);
        store.insert(session)?;
        Ok(s)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(out)))
}

fn session(st: &AppState, id: &str) -> ApiResult<SharedSession> {
    st.store.get(id)
}

pub async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    let s = session(&st, &id)?;
    let guard = s.read().await;
    Ok(Json(summary(&guard)))
}

#[derive(Debug, Deserialize)]
pub struct InstructionRequest {
    pub text: String,
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub step: usize,
    pub hash: String,
    /// The text that was parsed, after optional normalization.
    pub text: String,
    pub commands: Vec<EditCommand>,
    pub clause_errors: Vec<ClauseError>,
    pub command_errors: Vec<CommandFailure>,
    pub changed_voxels: usize,
    /// Change in 26-connected component count of every edited segment.
    pub component_delta: BTreeMap<u8, i64>,
    pub metrics: Option<MetricsReport>,
}

fn component_count(v: &LabelVolume, class: u8) -> i64 {
    v.class_mask(class)
        .map(|m| connected_components(&m, Connectivity::TwentySix).len() as i64)
        .unwrap_or(0)
}

pub async fn post_instruction(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<InstructionRequest>,
) -> ApiResult<Json<StepResponse>> {
    let s = session(&st, &id)?;
    let mut guard = s.write_owned().await;
    let store = st.store.clone();
    let bridge = st.bridge.clone();
    let out = blocking(move || {
        let text = if req.normalize {
            bridge
                .normalize(&req.text, guard.vocabulary())
                .map_err(|e| ApiError::Normalize(e.to_string()))?
        } else {
            req.text
        };
        let parsed = parse_instruction(&text, guard.vocabulary());
        let segments: Vec<u8> = parsed.commands().iter().map(|c| c.segment_id).collect();
        let before: BTreeMap<u8, i64> = segments.iter().map(|&c| (c, component_count(guard.current(), c))).collect();
        let step = guard.apply_parsed(&text, &parsed)?.clone();
        let component_delta = step
            .commands
            .iter()
            .map(|c| (c.segment_id, component_count(guard.current(), c.segment_id) - before[&c.segment_id]))
            .collect();
        store.persist(&guard)?;
        Ok(StepResponse {
            step: guard.history().len() - 1,
            hash: step.hash,
            text,
            commands: step.commands,
            clause_errors: step.clause_errors,
            command_errors: step.command_errors,
            changed_voxels: step.changed_voxels,
            component_delta,
            metrics: step.metrics,
        })
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
pub struct ViewQuery {
    pub kind: String,
    #[serde(default)]
    pub axis: Option<String>,
    #[serde(default)]
    pub index: Option<usize>,
    #[serde(default)]
    pub stride: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum View {
    /// Boundary voxel centers in millimeters, `[x, y, z, class]`.
    Pointcloud { hash: String, points: Vec<[f64; 4]> },
    /// Labels of one plane, row-major. Axis z gives rows along y and columns
    /// along x; axis y rows along z, columns along x; axis x rows along z,
    /// columns along y.
    Slice {
        hash: String,
        axis: String,
        index: usize,
        rows: Vec<Vec<u8>>,
    },
}

fn pointcloud(v: &LabelVolume, stride: usize) -> Vec<[f64; 4]> {
    let mut points = Vec::new();
    for class in v.present_classes() {
        let mask = v.class_mask(class).expect("present class");
        for p in surface_points(&mask).into_iter().step_by(stride) {
            points.push([p[0], p[1], p[2], class as f64]);
        }
    }
    points
}

fn slice(v: &LabelVolume, axis: &str, index: usize) -> ApiResult<Vec<Vec<u8>>> {
    let [nx, ny, nz] = v.dims();
    let (a, n) = match axis {
        "x" => (0, nx),
        "y" => (1, ny),
        "z" => (2, nz),
        other => return Err(bad(format!("axis must be x, y or z, got {other:?}"))),
    };
    if index >= n {
        return Err(bad(format!("slice index {index} out of range for axis {axis} of size {n}")));
    }
    let rows = match a {
        0 => (0..nz).map(|z| (0..ny).map(|y| v.get(index, y, z)).collect()).collect(),
        1 => (0..nz).map(|z| (0..nx).map(|x| v.get(x, index, z)).collect()).collect(),
        _ => (0..ny).map(|y| (0..nx).map(|x| v.get(x, y, index)).collect()).collect(),
    };
    Ok(rows)
}

pub async fn get_view(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> ApiResult<Json<View>> {
    let s = session(&st, &id)?;
    let guard = s.read_owned().await;
    blocking(move || {
        let hash = guard.hash().to_string();
        match q.kind.as_str() {
            "pointcloud" => {
                let stride = q.stride.unwrap_or(1);
                if stride == 0 {
                    return Err(bad("stride must be at least 1"));
                }
                Ok(View::Pointcloud {
                    hash,
                    points: pointcloud(guard.current(), stride),
                })
            }
            "slice" => {
                let axis = q.axis.unwrap_or_else(|| "z".into());
                let index = q.index.ok_or_else(|| bad("slice view needs an index"))?;
                let rows = slice(guard.current(), &axis, index)?;
                Ok(View::Slice { hash, axis, index, rows })
            }
            other => Err(bad(format!("view kind must be pointcloud or slice, got {other:?}"))),
        }
    })
    .await
    .map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub session_id: String,
    pub step: usize,
    pub hash: String,
    pub metrics: Option<MetricsReport>,
    /// Macro Dice after every step, when ground truth is known.
    pub macro_dice_trend: Vec<f64>,
}

pub async fn get_metrics(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<MetricsResponse>> {
    let s = session(&st, &id)?;
    let g = s.read().await;
    Ok(Json(MetricsResponse {
        session_id: g.session_id().to_string(),
        step: g.history().len() - 1,
        hash: g.hash().to_string(),
        metrics: g.last_step().metrics.clone(),
        macro_dice_trend: g.history().iter().filter_map(|h| h.metrics.as_ref().map(|m| m.macro_dice)).collect(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct RollbackRequest {
    pub step: usize,
}

pub async fn rollback(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<RollbackRequest>,
) -> ApiResult<Json<SessionSummary>> {
    let s = session(&st, &id)?;
    let mut guard = s.write_owned().await;
    let store = st.store.clone();
    blocking(move || {
        guard.rollback(req.step)?;
        store.persist(&guard)?;
        Ok(Json(summary(&guard)))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub session_id: String,
    pub hash: String,
    pub history: Vec<HistoryStep>,
}

pub async fn get_history(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<HistoryResponse>> {
    let s = session(&st, &id)?;
    let g = s.read().await;
    Ok(Json(HistoryResponse {
        session_id: g.session_id().to_string(),
        hash: g.hash().to_string(),
        history: g.history().to_vec(),
    }))
}
