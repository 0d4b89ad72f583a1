//! HTTP API under `/api/v1`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tower_http::cors::CorsLayer;

use arena_core::registry::Registry;

use crate::api::{Ack, CSubmit, CreateEvaluation, ErrorBody, EvaluationView, ScoreView, ZSubmit, SCHEMA_VERSION};
use crate::session::{self, CreateError, Session, SubmitError};

/// Upper bound on how long a Claude submission waits for its round to be
/// persisted before acknowledging.
const RECORD_WAIT: Duration = Duration::from_secs(30);

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    idempotency: tokio::sync::Mutex<HashMap<String, String>>,
    registry: Arc<Registry>,
    data_dir: PathBuf,
}

impl AppState {
    /// Loads every transcript already in `data_dir`. Runs cut off by a
    /// previous shutdown are closed with an `aborted` status.
    pub fn open(registry: Arc<Registry>, data_dir: impl Into<PathBuf>) -> std::io::Result<Arc<Self>> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&data_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(s) = session::recover(&path)? {
                    sessions.insert(s.id().to_string(), s);
                }
            }
        }
        if !sessions.is_empty() {
            log::info!("recovered {} evaluations from {}", sessions.len(), data_dir.display());
        }
        Ok(Arc::new(AppState {
            sessions: RwLock::new(sessions),
            idempotency: tokio::sync::Mutex::new(HashMap::new()),
            registry,
            data_dir,
        }))
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("sessions lock").get(id).cloned()
    }

    /// Stops every running evaluation; used on shutdown.
    pub fn abort_all(&self, reason: &str) {
        for s in self.sessions.read().expect("sessions lock").values() {
            if !s.state().is_terminal() {
                s.abort(reason);
            }
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                schema_version: SCHEMA_VERSION,
                error: code.into(),
                message: message.into(),
                field: None,
            },
        }
    }

    fn invalid(field: Option<String>, message: impl Into<String>) -> Self {
        let mut e = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message);
        e.body.field = field;
        e
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no evaluation {id}"))
    }

    fn internal(message: impl ToString) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.to_string())
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        ApiError::new(StatusCode::CONFLICT, e.code(), e.message())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ApiError::invalid(field, e.into_inner().to_string())
    })
}

fn check_envelope(session: &Session, schema_version: u32, evaluation_id: &str) -> ApiResult<()> {
    if schema_version != SCHEMA_VERSION {
        return Err(ApiError::invalid(
            Some("schema_version".into()),
            format!("unsupported schema_version {schema_version}; expected {SCHEMA_VERSION}"),
        ));
    }
    if evaluation_id != session.id() {
        return Err(ApiError::invalid(Some("evaluation_id".into()), "evaluation_id does not match the URL"));
    }
    Ok(())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/evaluations", post(create))
        .route("/api/v1/evaluations/{id}", get(view))
        .route("/api/v1/evaluations/{id}/z/next", get(z_next))
        .route("/api/v1/evaluations/{id}/z/submit", post(z_submit))
        .route("/api/v1/evaluations/{id}/c/next", get(c_next))
        .route("/api/v1/evaluations/{id}/c/submit", post(c_submit))
        .route("/api/v1/evaluations/{id}/score", get(score))
        .route("/api/v1/evaluations/{id}/transcript", get(transcript))
        .route("/api/v1/performers", get(performers))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until `shutdown` resolves, then aborts unfinished evaluations.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone());
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    state.abort_all("server shut down");
    result
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.session(id).ok_or_else(|| ApiError::not_found(id))
}

async fn create(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let req: CreateEvaluation = parse_body(&body)?;
    if req.schema_version != SCHEMA_VERSION {
        return Err(ApiError::invalid(
            Some("schema_version".into()),
            format!("unsupported schema_version {}", req.schema_version),
        ));
    }
    let key = headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_owned);
    // held across creation so concurrent retries with one key cannot race
    let mut keys = state.idempotency.lock().await;
    if let Some(id) = key.as_ref().and_then(|k| keys.get(k)) {
        let s = lookup(&state, id)?;
        return Ok((StatusCode::OK, Json(s.view())).into_response());
    }
    let id = format!("eval-{}", uuid::Uuid::new_v4().simple());
    let st = state.clone();
    let sid = id.clone();
    let (session, created) =
        tokio::task::spawn_blocking(move || session::start(sid, req.config, &st.registry, &st.data_dir))
            .await
            .map_err(ApiError::internal)?
            .map_err(|e| match e {
                CreateError::Invalid { field, message } => {
                    ApiError::invalid(field.map(|f| format!("config.{f}")), message)
                }
                CreateError::Io(e) => ApiError::internal(e),
            })?;
    state.sessions.write().expect("sessions lock").insert(id.clone(), session);
    if let Some(k) = key {
        keys.insert(k, id);
    }
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn view(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<EvaluationView>> {
    Ok(Json(lookup(&state, &id)?.view()))
}

async fn z_next(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    Ok(Json(s.z_challenge()?).into_response())
}

async fn c_next(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    Ok(Json(s.c_challenge()?).into_response())
}

async fn z_submit(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Ack>> {
    let s = lookup(&state, &id)?;
    let req: ZSubmit = parse_body(&body)?;
    check_envelope(&s, req.schema_version, &req.evaluation_id)?;
    s.submit_z(req.round, req.y)?;
    Ok(Json(Ack {
        schema_version: SCHEMA_VERSION,
        evaluation_id: id,
        round: req.round,
        accepted: true,
        recorded: None,
    }))
}

async fn c_submit(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Ack>> {
    let s = lookup(&state, &id)?;
    let req: CSubmit = parse_body(&body)?;
    check_envelope(&s, req.schema_version, &req.evaluation_id)?;
    s.submit_c(req.round, req.choice)?;
    let record = s.wait_for_record(req.round, RECORD_WAIT).await;
    let recorded = record.map(|r| !r.claude_defaulted && r.choice == Some(req.choice));
    Ok(Json(Ack {
        schema_version: SCHEMA_VERSION,
        evaluation_id: id,
        round: req.round,
        accepted: true,
        recorded: Some(recorded.unwrap_or(false)),
    }))
}

async fn score(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ScoreView>> {
    let s = lookup(&state, &id)?;
    let report = s.score().map_err(ApiError::internal)?;
    Ok(Json(ScoreView { schema_version: SCHEMA_VERSION, evaluation_id: id, state: s.state(), report }))
}

async fn transcript(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let bytes = tokio::fs::read(s.path()).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}

async fn performers() -> Json<crate::api::PerformerListing> {
    Json(session::listing())
}
