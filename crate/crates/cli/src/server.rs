//! HTTP service over a data root of patient directories and stored bundles.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use insight_core::bundle::{
    draft_for, drilldown, to_canonical_json, validate_bundle_json, BundleError, BundleStore,
    DashboardBundle,
};
use insight_core::pipeline::run_dir;
use insight_core::synthesizer::compose::ComposerBackend;
use insight_core::Config;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub struct AppState {
    pub store: BundleStore,
    pub config: Config,
    pub backend: ComposerBackend,
    running: Mutex<HashSet<String>>,
}

/// Marks a patient's recompute as in flight until dropped.
pub struct RecomputeGuard {
    state: Arc<AppState>,
    patient: String,
}

impl Drop for RecomputeGuard {
    fn drop(&mut self) {
        self.state
            .running
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&self.patient);
    }
}

impl AppState {
    pub fn new(
        data_root: impl Into<PathBuf>,
        config: Config,
        backend: ComposerBackend,
    ) -> Arc<Self> {
        Arc::new(AppState {
            store: BundleStore::new(data_root),
            config,
            backend,
            running: Mutex::default(),
        })
    }

    /// `None` if a recompute for `patient` is already running.
    pub fn begin_recompute(self: &Arc<Self>, patient: &str) -> Option<RecomputeGuard> {
        let mut running = self.running.lock().unwrap_or_else(|e| e.into_inner());
        running.insert(patient.to_string()).then(|| RecomputeGuard {
            state: self.clone(),
            patient: patient.to_string(),
        })
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest(String),
    Conflict(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

impl From<BundleError> for ApiError {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::UnknownIds(_) | BundleError::Narrate(_) => {
                ApiError::BadRequest(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match HeaderValue::from_str(&state.config.server.cors_origin) {
        Ok(origin) => CorsLayer::new().allow_origin(AllowOrigin::exact(origin)),
        Err(_) => CorsLayer::new(),
    }
    .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
    .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/patients", get(list_patients))
        .route("/api/patients/{id}/bundle", get(get_bundle))
        .route(
            "/api/patients/{id}/facts/{fact_id}/drilldown",
            get(get_drilldown),
        )
        .route("/api/patients/{id}/draft-message", post(draft_message))
        .route("/api/patients/{id}/recompute", post(recompute))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Serialize)]
struct PatientEntry {
    patient_id: String,
    name: String,
}

async fn list_patients(
    State(state): State<Arc<AppState>>,
) -> Result<Json<Vec<PatientEntry>>, ApiError> {
    let patients = state.store.patients()?;
    Ok(Json(
        patients
            .into_iter()
            .map(|(patient_id, name)| PatientEntry { patient_id, name })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct SessionQuery {
    session: Option<usize>,
}

fn stored_text(state: &AppState, id: &str, session: Option<usize>) -> Result<String, ApiError> {
    let not_found = || ApiError::NotFound(format!("no bundle for patient {id}"));
    let session = session
        .or_else(|| state.store.latest_session(id))
        .ok_or_else(not_found)?;
    state.store.read(id, session)?.ok_or_else(not_found)
}

fn stored_bundle(
    state: &AppState,
    id: &str,
    session: Option<usize>,
) -> Result<DashboardBundle, ApiError> {
    Ok(validate_bundle_json(&stored_text(state, id, session)?)?)
}

async fn get_bundle(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> Result<Response, ApiError> {
    let text = stored_text(&state, &id, q.session)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn get_drilldown(
    State(state): State<Arc<AppState>>,
    Path((id, fact_id)): Path<(String, String)>,
    Query(q): Query<SessionQuery>,
) -> Result<Response, ApiError> {
    let bundle = stored_bundle(&state, &id, q.session)?;
    let d = drilldown(&bundle, &fact_id)
        .ok_or_else(|| ApiError::NotFound(format!("no fact {fact_id}")))?;
    Ok(Json(d).into_response())
}

#[derive(Deserialize)]
struct DraftRequest {
    #[serde(default)]
    insight_ids: Vec<String>,
    #[serde(default)]
    activity_ids: Vec<String>,
    session: Option<usize>,
}

async fn draft_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<DraftRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let bundle = stored_bundle(&state, &id, req.session)?;
    let text = draft_for(
        &bundle,
        &req.insight_ids,
        &req.activity_ids,
        &state.config.blocklist,
    )?;
    Ok(Json(json!({ "text": text })))
}

async fn recompute(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let dir = state.store.root().join(&id);
    if !dir.join("profile.json").is_file() {
        return Err(ApiError::NotFound(format!("no patient {id}")));
    }
    let guard = state
        .begin_recompute(&id)
        .ok_or_else(|| ApiError::Conflict(format!("recompute for {id} already running")))?;
    let result = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let st = &_guard.state;
        let summary = run_dir(&dir, None, &st.config, &st.backend)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let json = to_canonical_json(&summary.bundle)?;
        st.store.write(&id, summary.bundle.session_index, &json)?;
        Ok::<_, ApiError>(json!({
            "patient_id": id,
            "session": summary.bundle.session_index,
            "facts": summary.fact_count,
            "insights": summary.bundle.sections.patient_data_insights.len(),
        }))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(result))
}
