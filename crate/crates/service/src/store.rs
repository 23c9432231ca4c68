use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use forge_core::refine::{HistoryStep, RefinementSession};
use forge_core::volume::{load_volume, save_volume, VolumeFormat};
use lru::LruCache;
use tokio::sync::RwLock;

use crate::error::ApiError;

pub type SharedSession = Arc<RwLock<RefinementSession>>;

/// Sessions by id, evicting the least recently used beyond `capacity`.
///
/// With a snapshot directory every session is also kept on disk as its
/// initial volume, optional ground truth and history. A session missing from
/// memory (evicted, or from before a restart) is restored from disk on
/// access by replaying its history.
pub struct SessionStore {
    cache: Mutex<LruCache<String, SharedSession>>,
    snapshot_dir: Option<PathBuf>,
}

/// 128 random bits, hex encoded.
pub fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

impl SessionStore {
    pub fn new(capacity: usize, snapshot_dir: Option<PathBuf>) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("nonzero");
        Self {
            cache: Mutex::new(LruCache::new(cap)),
            snapshot_dir,
        }
    }

    fn cache(&self) -> std::sync::MutexGuard<'_, LruCache<String, SharedSession>> {
        self.cache.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn insert(&self, session: RefinementSession) -> Result<SharedSession, ApiError> {
        if let Some(dir) = &self.snapshot_dir {
            write_initial(&dir.join(session.session_id()), &session)?;
            write_history(&dir.join(session.session_id()), &session)?;
        }
        let id = session.session_id().to_string();
        let shared = Arc::new(RwLock::new(session));
        self.cache().put(id, shared.clone());
        Ok(shared)
    }

    /// Looks up `id`, marking it recently used. Falls back to the snapshot
    /// directory on a miss.
    pub fn get(&self, id: &str) -> Result<SharedSession, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::NotFound(id.to_string()));
        }
        if let Some(s) = self.cache().get(id) {
            return Ok(s.clone());
        }
        let dir = match &self.snapshot_dir {
            Some(d) if d.join(id).join("history.json").exists() => d.join(id),
            _ => return Err(ApiError::NotFound(id.to_string())),
        };
        let session = restore(id, &dir)?;
        let mut cache = self.cache();
        // Another request may have restored it meanwhile.
        if let Some(s) = cache.get(id) {
            return Ok(s.clone());
        }
        let shared = Arc::new(RwLock::new(session));
        cache.put(id.to_string(), shared.clone());
        Ok(shared)
    }

    /// Persists the history of `session` when snapshots are enabled.
    pub fn persist(&self, session: &RefinementSession) -> Result<(), ApiError> {
        match &self.snapshot_dir {
            Some(dir) => write_history(&dir.join(session.session_id()), session),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}

fn write_initial(dir: &Path, s: &RefinementSession) -> Result<(), ApiError> {
    fs::create_dir_all(dir).map_err(internal)?;
    save_volume(s.initial(), &dir.join("initial.rawl"), VolumeFormat::Rawl).map_err(internal)?;
    if let Some(gt) = s.gt() {
        save_volume(gt, &dir.join("gt.rawl"), VolumeFormat::Rawl).map_err(internal)?;
    }
    Ok(())
}

fn write_history(dir: &Path, s: &RefinementSession) -> Result<(), ApiError> {
    let tmp = dir.join("history.json.tmp");
    let bytes = serde_json::to_vec(s.history()).map_err(internal)?;
    fs::write(&tmp, bytes).map_err(internal)?;
    fs::rename(&tmp, dir.join("history.json")).map_err(internal)
}

fn restore(id: &str, dir: &Path) -> Result<RefinementSession, ApiError> {
    let initial = load_volume(&dir.join("initial.rawl"), VolumeFormat::Rawl).map_err(internal)?;
    let gt_path = dir.join("gt.rawl.json");
    let gt = if gt_path.exists() {
        Some(load_volume(&gt_path, VolumeFormat::Rawl).map_err(internal)?)
    } else {
        None
    };
    let bytes = fs::read(dir.join("history.json")).map_err(internal)?;
    let history: Vec<HistoryStep> = serde_json::from_slice(&bytes).map_err(internal)?;
    Ok(RefinementSession::restore(id, initial, gt, history)?)
}
