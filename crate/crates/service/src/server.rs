//! HTTP endpoints over [`SessionStore`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::bench::PolicyKind;
use crate::scene_file;
use crate::session::{ExportFormat, SessionError, SessionStore};

pub struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::UnknownSession(_) => ApiError(StatusCode::NOT_FOUND, json!({ "error": message })),
            SessionError::BadRequest(_) => ApiError(StatusCode::BAD_REQUEST, json!({ "error": message })),
            SessionError::Policy { summary, .. } => {
                ApiError(StatusCode::BAD_GATEWAY, json!({ "error": message, "partial": summary }))
            }
        }
    }
}

fn bad_request(message: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, json!({ "error": message.to_string() }))
}

type AppState = Arc<SessionStore>;
type ApiResult = Result<Response, ApiError>;

/// Runs a session operation off the async executor; refinement may block on
/// an external endpoint.
async fn blocking<T: Send + 'static>(
    store: AppState,
    f: impl FnOnce(&SessionStore) -> Result<T, SessionError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })))?
        .map_err(ApiError::from)
}

pub fn router(store: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/actions", post(act))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/assemble", post(assemble))
        .route("/sessions/{id}/export", get(export))
        .with_state(store)
}

async fn create(State(store): State<AppState>, body: String) -> ApiResult {
    let scene = scene_file::parse_scene(&body).map_err(bad_request)?;
    let (id, state) = blocking(store, move |s| s.create(scene)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "state": state }))).into_response())
}

async fn list(State(store): State<AppState>) -> ApiResult {
    Ok(Json(json!({ "sessions": store.ids() })).into_response())
}

async fn state(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let state = blocking(store, move |s| s.with(&id, |x| x.current.clone())).await?;
    Ok(Json(state).into_response())
}

#[derive(Deserialize)]
struct ActBody {
    text: String,
}

async fn act(State(store): State<AppState>, Path(id): Path<String>, Json(body): Json<ActBody>) -> ApiResult {
    let r = blocking(store, move |s| s.with(&id, |x| x.act(&body.text)).and_then(|r| r)).await?;
    Ok(Json(r).into_response())
}

async fn undo(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let state = blocking(store, move |s| s.with(&id, |x| x.undo())).await?;
    Ok(Json(json!({ "state": state })).into_response())
}

#[derive(Deserialize)]
struct RefineBody {
    policy: PolicyKind,
    rounds: Option<usize>,
}

async fn refine(State(store): State<AppState>, Path(id): Path<String>, Json(body): Json<RefineBody>) -> ApiResult {
    let r = blocking(store, move |s| s.with(&id, |x| x.refine(body.policy, body.rounds)).and_then(|r| r)).await?;
    Ok(Json(r).into_response())
}

#[derive(Deserialize)]
struct MetricsQuery {
    /// Path to a ground-truth scene file; defaults to the session's scene.
    gt: Option<String>,
}

async fn metrics(State(store): State<AppState>, Path(id): Path<String>, Query(q): Query<MetricsQuery>) -> ApiResult {
    let gt = match q.gt {
        Some(p) => Some(scene_file::load_scene(std::path::Path::new(&p)).map_err(bad_request)?),
        None => None,
    };
    let r = blocking(store, move |s| s.with(&id, |x| x.metrics(gt.as_ref())).and_then(|r| r)).await?;
    Ok(Json(r).into_response())
}

#[derive(Deserialize)]
struct AssembleBody {
    contacts: String,
}

async fn assemble(State(store): State<AppState>, Path(id): Path<String>, Json(body): Json<AssembleBody>) -> ApiResult {
    let r = blocking(store, move |s| s.with(&id, |x| x.assemble(&body.contacts))).await?;
    Ok(Json(r).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    format: ExportFormat,
}

async fn export(State(store): State<AppState>, Path(id): Path<String>, Query(q): Query<ExportQuery>) -> ApiResult {
    let text = blocking(store, move |s| s.with(&id, |x| x.export(q.format))).await?;
    let mime = match q.format {
        ExportFormat::Mesh => "text/plain; charset=utf-8",
        _ => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, mime)], text).into_response())
}

/// Serves until the process is stopped.
pub async fn serve(store: SessionStore, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(store))).await
}
