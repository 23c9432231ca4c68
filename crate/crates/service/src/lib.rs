//! HTTP API hosting refinement sessions.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create from an upload or server paths |
//! | GET | `/sessions/{id}` | summary |
//! | POST | `/sessions/{id}/instructions` | apply one instruction |
//! | GET | `/sessions/{id}/view` | pointcloud or slice |
//! | GET | `/sessions/{id}/metrics` | latest report and Dice trend |
//! | POST | `/sessions/{id}/rollback` | truncate history to a step |
//! | GET | `/sessions/{id}/history` | full history |
//!
//! Every mutation response carries the content hash of the resulting volume.
//! Requests to one session are serialized by a per-session lock; distinct
//! sessions proceed in parallel.

pub mod api;
pub mod error;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use forge_core::llm_bridge::{Bridge, BridgeConfig, BridgeError};
use forge_core::metrics::EvalConfig;

pub use error::ApiError;
pub use store::SessionStore;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Sessions kept in memory before least-recently-used eviction.
    pub capacity: usize,
    /// Largest accepted volume, in voxels.
    pub max_voxels: usize,
    pub snapshot_dir: Option<PathBuf>,
    pub bridge: BridgeConfig,
    pub eval: EvalConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            capacity: 64,
            max_voxels: 512 * 512 * 512,
            snapshot_dir: None,
            bridge: BridgeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub store: Arc<SessionStore>,
    pub bridge: Bridge,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, BridgeError> {
        let bridge = Bridge::new(config.bridge.clone())?;
        let store = SessionStore::new(config.capacity, config.snapshot_dir.clone());
        Ok(Self {
            config: Arc::new(config),
            store: Arc::new(store),
            bridge,
        })
    }
}

pub fn router(state: AppState) -> Router {
    // Room for a full-size rawl body plus its header and form framing.
    let body_limit = state.config.max_voxels.saturating_mul(2).saturating_add(1 << 20);
    Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/instructions", post(api::post_instruction))
        .route("/sessions/{id}/view", get(api::get_view))
        .route("/sessions/{id}/metrics", get(api::get_metrics))
        .route("/sessions/{id}/rollback", post(api::rollback))
        .route("/sessions/{id}/history", get(api::get_history))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
