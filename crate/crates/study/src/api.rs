//! HTTP routes.
//!
//! Study-mode item payloads carry pair ids, lowercase letters and image URLs
//! only. Nothing in them names or orders the answer.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::eval_harness::ScoreOptions;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::stats::{human_stats, HumanStats};
use crate::store::{Decision, Mode, Next, RejectReason, Store, StoreError};

pub struct AppState {
    pub store: Mutex<Store>,
    pub pairs_root: PathBuf,
}

pub struct ApiError(StatusCode, String, String);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::UnknownSession => (StatusCode::UNAUTHORIZED, "unknown_session"),
            StoreError::UnknownPair(_) => (StatusCode::NOT_FOUND, "unknown_pair"),
            StoreError::NotServed(_) => (StatusCode::CONFLICT, "not_served"),
            StoreError::InvalidLetter { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_letter"),
            StoreError::WrongMode(_) => (StatusCode::FORBIDDEN, "wrong_mode"),
            StoreError::AlreadyDecided(_) => (StatusCode::CONFLICT, "already_decided"),
            StoreError::EmptyLabel => (StatusCode::UNPROCESSABLE_ENTITY, "empty_label"),
            StoreError::Log(_) | StoreError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!("{e}");
        }
        // messages stay lowercase so a study client never sees a capital letter
        ApiError(status, code.to_string(), e.to_string().to_lowercase())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1, "message": self.2 }))).into_response()
    }
}

type Shared = Arc<AppState>;

fn bearer(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .ok_or_else(|| ApiError(StatusCode::UNAUTHORIZED, "missing_token".into(), "bearer token required".into()))
}

/// Runs a store operation off the async workers; writes fsync.
async fn with_store<T: Send + 'static>(
    state: &Shared,
    f: impl FnOnce(&mut Store) -> Result<T, StoreError> + Send + 'static,
) -> Result<T, ApiError> {
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&mut state.store.lock()))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "panic".into(), e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
struct NewSession {
    participant_label: String,
    mode: Mode,
}

#[derive(Serialize)]
struct SessionCreated {
    token: String,
    mode: Mode,
}

fn mint_token() -> String {
    format!("{:032x}", rand::random::<u128>())
}

async fn create_session(State(state): State<Shared>, Json(req): Json<NewSession>) -> Result<Json<SessionCreated>, ApiError> {
    let mode = req.mode;
    let token = with_store(&state, move |s| s.create_session(&req.participant_label, mode, mint_token())).await?;
    Ok(Json(SessionCreated { token, mode }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Progress {
    pub served: usize,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Images {
    pub view1: String,
    pub view2: String,
}

/// What a vetter sees in addition to the study payload.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct VetInfo {
    pub answer_letter: char,
    pub answer_object: u16,
    pub view1_unlabeled: String,
    pub view2_original: String,
    #[serde(default)]
    pub answer_region: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ItemResponse {
    Item {
        pair_id: String,
        mode: Mode,
        num_labels: usize,
        letters: Vec<String>,
        images: Images,
        progress: Progress,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vet: Option<VetInfo>,
    },
    Exhausted {
        progress: Progress,
    },
}

fn image_url(pair_id: &str, kind: &str) -> String {
    format!("/api/image/{pair_id}/{kind}")
}

fn answer_region(state: &AppState, pair_id: &str) -> Option<serde_json::Value> {
    let bytes = std::fs::read(state.pairs_root.join(pair_id).join(forge_core::pipeline::META_FILE)).ok()?;
    let meta: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
    meta.get("detail")?.get("answer_region").cloned()
}

async fn next_item(State(state): State<Shared>, headers: HeaderMap) -> Result<Json<ItemResponse>, ApiError> {
    let token = bearer(&headers)?;
    let (next, mode, served, item) = with_store(&state, move |s| {
        let next = s.next_item(&token)?;
        let session = s.session(&token)?;
        let item = match &next {
            Next::Item(id) => s.manifest().item(id).cloned(),
            Next::Exhausted => None,
        };
        Ok((next, session.mode, session.served.len(), item))
    })
    .await?;
    let total = state.store.lock().manifest().items.len();
    let progress = Progress { served, total };
    let (Next::Item(pair_id), Some(item)) = (next, item) else {
        return Ok(Json(ItemResponse::Exhausted { progress }));
    };
    let vet = (mode == Mode::Vet).then(|| VetInfo {
        answer_letter: item.answer_letter,
        answer_object: item.answer_object,
        view1_unlabeled: image_url(&pair_id, "view1_unlabeled"),
        view2_original: image_url(&pair_id, "view2_original"),
        answer_region: answer_region(&state, &pair_id),
    });
    Ok(Json(ItemResponse::Item {
        images: Images {
            view1: image_url(&pair_id, "view1"),
            view2: image_url(&pair_id, "view2"),
        },
        mode,
        num_labels: item.num_labels,
        letters: item.valid_letters().iter().map(|c| c.to_ascii_lowercase().to_string()).collect(),
        progress,
        vet,
        pair_id,
    }))
}

#[derive(Deserialize)]
struct AnswerBody {
    letter: String,
}

async fn answer(
    State(state): State<Shared>,
    headers: HeaderMap,
    Path(pair_id): Path<String>,
    Json(body): Json<AnswerBody>,
) -> Result<impl IntoResponse, ApiError> {
    let token = bearer(&headers)?;
    let ack = with_store(&state, move |s| s.record_answer(&token, &pair_id, &body.letter)).await?;
    Ok(Json(ack))
}

#[derive(Deserialize)]
struct VetBody {
    decision: Decision,
    #[serde(default)]
    reason: Option<RejectReason>,
    #[serde(default)]
    note: String,
}

async fn vet(
    State(state): State<Shared>,
    headers: HeaderMap,
    Path(pair_id): Path<String>,
    Json(body): Json<VetBody>,
) -> Result<impl IntoResponse, ApiError> {
    let token = bearer(&headers)?;
    with_store(&state, move |s| s.record_vet(&token, &pair_id, body.decision, body.reason, &body.note)).await?;
    Ok(Json(json!({ "ok": true })))
}

async fn stats(State(state): State<Shared>) -> Json<HumanStats> {
    let (trials, vets, manifest) = {
        let s = state.store.lock();
        (s.trials().to_vec(), s.vets().to_vec(), s.manifest().clone())
    };
    Json(human_stats(&trials, &vets, &manifest, &ScoreOptions::default()))
}

/// `view1`/`view2` are what participants see and need no token. The
/// unedited originals are for vetters only: pass a vet token as a bearer
/// header or `?token=`.
async fn image(
    State(state): State<Shared>,
    headers: HeaderMap,
    Path((pair_id, kind)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let rel = {
        let s = state.store.lock();
        let item = s
            .manifest()
            .item(&pair_id)
            .ok_or_else(|| ApiError::from(StoreError::UnknownPair(pair_id.clone())))?;
        let restricted = match kind.as_str() {
            "view1" => Some((item.view1.clone(), false)),
            "view2" => Some((item.view2.clone(), false)),
            "view1_unlabeled" => Some((item.view1_unlabeled.clone(), true)),
            "view2_original" => Some((item.view2_original.clone(), true)),
            _ => None,
        };
        let Some((rel, vet_only)) = restricted else {
            return Err(ApiError(StatusCode::NOT_FOUND, "unknown_image".into(), format!("no image {kind}")));
        };
        if vet_only {
            let token = bearer(&headers).ok().or_else(|| q.get("token").cloned()).unwrap_or_default();
            if s.session(&token)?.mode != Mode::Vet {
                return Err(StoreError::WrongMode(Mode::Vet).into());
            }
        }
        rel
    };
    let path = state.pairs_root.join(rel);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, "missing_image".into(), e.to_string().to_lowercase()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response())
}

/// The full API; `static_dir`, when given, is served for every other path.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/item/next", get(next_item))
        .route("/api/item/{id}/answer", post(answer))
        .route("/api/item/{id}/vet", post(vet))
        .route("/api/stats", get(stats))
        .route("/api/image/{id}/{kind}", get(image))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
