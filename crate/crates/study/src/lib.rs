//! Human vetting and forced-choice study service.
//!
//! State lives in one append-only JSONL event log. On startup the log is
//! replayed; every write is fsynced before the request is acknowledged.

pub mod api;
pub mod curate;
pub mod stats;
pub mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use forge_core::BenchmarkManifest;
use parking_lot::Mutex;

pub use api::{router, AppState, ItemResponse};
pub use curate::{export_curated, Curated, Outcome, SidecarRow, DEFAULT_PER_SCENE_CAP};
pub use stats::{human_stats, HumanStats};
pub use store::{read_trials, read_vets, Decision, Event, Mode, RejectReason, Store, StoreError, VetDecision};

pub struct ServeConfig {
    pub manifest: BenchmarkManifest,
    pub pairs_root: PathBuf,
    pub log_path: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub seed: u64,
}

pub fn app(cfg: ServeConfig) -> Result<axum::Router, StoreError> {
    let store = Store::open(cfg.manifest, &cfg.log_path, cfg.seed)?;
    let state = Arc::new(AppState {
        store: Mutex::new(store),
        pairs_root: cfg.pairs_root,
    });
    Ok(router(state, cfg.static_dir))
}

pub async fn serve(cfg: ServeConfig, addr: SocketAddr) -> std::io::Result<()> {
    let app = app(cfg).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("study service listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

/// Writes the curated manifest and its decision sidecar next to each other.
pub fn write_curated(curated: &Curated, manifest_out: &Path) -> std::io::Result<PathBuf> {
    curated.manifest.save(manifest_out)?;
    let sidecar = manifest_out.with_extension("decisions.jsonl");
    forge_core::jsonl::write_all(&sidecar, &curated.sidecar).map_err(std::io::Error::other)?;
    Ok(sidecar)
}
