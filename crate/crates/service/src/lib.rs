//! HTTP/JSON service hosting live labeling sessions.
//!
//! Routes:
//! - `POST /api/sessions` creates a session from a named or inline dataset
//! - `GET /api/sessions/{id}/next` returns the pending query
//! - `POST /api/sessions/{id}/labels` answers it
//! - `GET /api/sessions/{id}/state` returns a full snapshot
//! - `GET /api/sessions/{id}/export` returns the learning curve
//!
//! Errors are `{code, message}` JSON bodies. Each session has its own fair
//! lock, so label submissions apply in arrival order and never interleave
//! with a selection.

mod error;
mod store;

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use hse_core::grf::argmax_row;
use hse_core::hierarchy::TreeNodeExport;
use hse_core::session::{CurveExport, QueryRecord, SessionStatus};
use hse_core::{ActiveSession, LearningCurve, SessionConfig};
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ErrorBody};
pub use store::{unix_now, AppState, DatasetSource, SessionEntry, SessionHandle, BUILTIN_DATASETS};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    /// Name of a built-in dataset or of `<name>.csv` in the dataset directory.
    #[serde(default)]
    pub dataset: Option<String>,
    /// Inline CSV in the ingestion format.
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub class_count: Option<usize>,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub id: String,
    pub created_at: f64,
    pub config: SessionConfig,
    pub dataset: String,
    pub points: usize,
    pub class_count: usize,
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextQuery {
    pub point: usize,
    pub asset: Option<String>,
    pub posterior_row: Vec<f64>,
    pub subqueries_used: usize,
    /// `(point, expected risk)` pairs scored for this selection.
    pub evaluated: Vec<(usize, f64)>,
    pub initial: bool,
    pub progress: Progress,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRequest {
    pub point: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub labeled_count: usize,
    pub accuracy: Option<f64>,
    pub curve_so_far: Vec<f64>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub point: usize,
    pub map: usize,
    pub confidence: f64,
    pub posterior: Vec<f64>,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub status: SessionStatus,
    pub config: SessionConfig,
    pub dataset: String,
    pub class_count: usize,
    pub pending: Option<usize>,
    pub labels: Vec<QueryRecord>,
    pub points: Vec<PointState>,
    pub curve: LearningCurve,
    pub tree: Option<Vec<TreeNodeExport>>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(get_next))
        .route("/api/sessions/{id}/labels", post(post_label))
        .route("/api/sessions/{id}/state", get(get_state))
        .route("/api/sessions/{id}/export", get(get_export))
        .with_state(state)
}

/// Serves the API on an already bound listener until the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let req = json_body(body)?;
    let source = match (req.dataset, req.csv) {
        (Some(name), None) => DatasetSource::Named { name },
        (None, Some(csv)) => {
            DatasetSource::Inline { csv, label_column: req.label_column, class_count: req.class_count }
        }
        _ => return Err(ApiError::bad_request("give exactly one of `dataset` or `csv`")),
    };
    let config = req.config;
    let st = state.clone();
    let (entry, response) = blocking(move || {
        let dataset = st.resolve(&source)?;
        let session = ActiveSession::start(dataset.clone(), config.clone())?;
        let handle =
            SessionHandle { id: uuid::Uuid::new_v4().simple().to_string(), created_at: unix_now(), config };
        let response = CreateSessionResponse {
            id: handle.id.clone(),
            created_at: handle.created_at,
            config: handle.config.clone(),
            dataset: dataset.name().to_string(),
            points: dataset.len(),
            class_count: dataset.class_count(),
            class_names: dataset.class_names().map(<[String]>::to_vec),
        };
        Ok((st.insert(handle, source, session), response))
    })
    .await?;
    let session = entry.session.lock().await;
    state.persist(&entry, &session)?;
    Ok((StatusCode::CREATED, Json(response)))
}

async fn get_next(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<NextQuery>, ApiError> {
    let entry = state.get(&id)?;
    let mut guard = entry.session.clone().lock_owned().await;
    let next = blocking(move || {
        let point = guard.next_query()?;
        let issued = guard.issued().expect("query just issued");
        Ok(NextQuery {
            point,
            asset: guard.dataset().asset(point).map(str::to_owned),
            posterior_row: guard.model().posterior_row(point).to_vec(),
            subqueries_used: issued.trace.subqueries_used,
            evaluated: issued.trace.evaluated.clone(),
            initial: issued.initial,
            progress: Progress { answered: guard.answered(), total: guard.config().total_queries() },
        })
    })
    .await?;
    Ok(Json(next))
}

async fn post_label(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<LabelResponse>, ApiError> {
    let entry = state.get(&id)?;
    let req = json_body(body)?;
    let mut guard = entry.session.clone().lock_owned().await;
    let (guard, response) = blocking(move || {
        guard.submit_label(req.point, req.class)?;
        let has_truth = guard.dataset().labels().is_some();
        let response = LabelResponse {
            labeled_count: guard.answered(),
            accuracy: if has_truth { guard.curve().accuracies.last().copied() } else { None },
            curve_so_far: guard.curve().accuracies.clone(),
            status: guard.status(),
        };
        Ok((guard, response))
    })
    .await?;
    state.persist(&entry, &guard)?;
    Ok(Json(response))
}

async fn get_state(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionState>, ApiError> {
    let entry = state.get(&id)?;
    let s = entry.session.lock().await;
    let model = s.model();
    let points = (0..model.len())
        .map(|i| {
            let row = model.posterior_row(i);
            let map = argmax_row(row);
            PointState { point: i, map, confidence: row[map], posterior: row.to_vec(), labeled: model.is_labeled(i) }
        })
        .collect();
    Ok(Json(SessionState {
        id: entry.handle.id.clone(),
        status: s.status(),
        config: s.config().clone(),
        dataset: s.dataset().name().to_string(),
        class_count: model.class_count(),
        pending: s.issued().map(|q| q.point),
        labels: s.query_log().to_vec(),
        points,
        curve: s.curve().clone(),
        tree: s.tree().map(|t| t.export()),
    }))
}

async fn get_export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<CurveExport>, ApiError> {
    let entry = state.get(&id)?;
    let s = entry.session.lock().await;
    Ok(Json(s.curve_export()))
}
