//! Versioned HTTP+JSON API and the per-session WebSocket channel.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tableau_core::orchestrator::JobId;
use tableau_core::raster::{encode_png_rgba, RasterDigest};
use tableau_core::scene::{Canvas, FeedId};
use tableau_core::RasterError;
use tokio::sync::broadcast::error::RecvError;

use crate::command::CommandEnvelope;
use crate::error::SessionError;
use crate::history::HistorySummary;
use crate::service::{SessionHandle, SessionManager};

/// Frames and priors can be large PNGs.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<SessionManager>,
    pub token: Option<String>,
}

pub struct ApiError(pub SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

pub fn status_of(e: &SessionError) -> StatusCode {
    use SessionError::*;
    match e {
        UnknownSession(_) | UnknownFeed(_) | UnknownJob(_) | Raster(RasterError::Missing(_)) => StatusCode::NOT_FOUND,
        Decode(_) => StatusCode::BAD_REQUEST,
        CommandRejected(_) | AlreadyExists(_) => StatusCode::CONFLICT,
        InvalidCommand(_) | NothingToUndo | HistoryIndex { .. } | Prompt(_) | Plan(_) | Layout(_) | Composite(_)
        | SchemaVersionMismatch { .. } | DigestMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        Generation(_) | Segmentation(_) => StatusCode::BAD_GATEWAY,
        Timeout => StatusCode::GATEWAY_TIMEOUT,
        Closed => StatusCode::SERVICE_UNAVAILABLE,
        Scene(_) | Raster(_) | Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

pub fn error_body(e: &SessionError) -> Value {
    json!({ "error": { "code": e.code(), "message": e.to_string() } })
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(error_body(&self.0))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, SessionError> {
    serde_json::from_slice(body).map_err(|e| SessionError::InvalidCommand(format!("malformed request body: {e}")))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, SessionError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| SessionError::Io(e.to_string()))?.map_err(ApiError)
}

#[derive(Debug, Default, Deserialize)]
struct CreateBody {
    canvas: Option<Canvas>,
}

#[derive(Debug, Deserialize)]
struct JoinBody {
    display_name: String,
}

#[derive(Debug, Deserialize)]
struct PathBody {
    path: std::path::PathBuf,
}

#[derive(Debug, Default, Deserialize)]
struct HistoryQuery {
    #[serde(default)]
    full: bool,
}

#[derive(Debug, Serialize)]
struct SessionSummary {
    session_id: String,
    revision: usize,
    participants: usize,
    active_job: Option<JobId>,
}

fn summary(h: &SessionHandle) -> SessionSummary {
    let snap = h.snapshot();
    SessionSummary {
        session_id: h.id.to_string(),
        revision: snap.revision,
        participants: h.participants().len(),
        active_job: snap.active_job.as_ref().map(|j| j.job_id),
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateBody = if body.iter().all(u8::is_ascii_whitespace) { CreateBody::default() } else { parse_json(&body)? };
    let handle = app.manager.create(req.canvas)?;
    Ok((StatusCode::CREATED, Json(handle.snapshot())).into_response())
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(app.manager.list().iter().map(|h| summary(h)).collect())
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(app.manager.get(&id)?.snapshot_json()).into_response())
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.manager.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn join(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let req: JoinBody = parse_json(&body)?;
    let (feed_id, ack) = handle.join(&req.display_name).await?;
    Ok((StatusCode::CREATED, Json(json!({ "feed_id": feed_id, "revision": ack.revision }))).into_response())
}

async fn command(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let env: CommandEnvelope = parse_json(&body)?;
    let ack = handle.command(env).await?;
    let status = if ack.job_id.is_some() { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((status, Json(ack)).into_response())
}

async fn ingest(
    State(app): State<AppState>,
    Path((id, feed)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let ack = handle.ingest(FeedId::from(feed), body.to_vec()).await?;
    Ok(Json(ack).into_response())
}

async fn history(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HistoryQuery>,
) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let entries = handle.history();
    Ok(if q.full {
        Json(entries.iter().map(|e| (**e).clone()).collect::<Vec<_>>()).into_response()
    } else {
        Json(entries.iter().map(|e| HistorySummary::from(&**e)).collect::<Vec<_>>()).into_response()
    })
}

async fn history_entry(State(app): State<AppState>, Path((id, index)): Path<(String, usize)>) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let len = handle.history().len();
    let entry = handle.history_entry(index).ok_or(SessionError::HistoryIndex { index, len })?;
    Ok(Json(&*entry).into_response())
}

async fn raster(State(app): State<AppState>, Path((id, digest)): Path<(String, String)>) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let digest = RasterDigest(digest.trim_end_matches(".png").to_owned());
    let raster = handle.raster(&digest).ok_or(SessionError::Raster(RasterError::Missing(digest)))?;
    Ok(png(raster.to_png()))
}

async fn render(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let img = blocking(move || handle.render()).await?;
    Ok(png(encode_png_rgba(&img)))
}

async fn job(State(app): State<AppState>, Path((id, job)): Path<(String, String)>) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let job_id: JobId = job.parse().map_err(|_| SessionError::UnknownJob(job.clone()))?;
    let view = handle.job(&job_id).ok_or(SessionError::UnknownJob(job))?;
    Ok(Json(view).into_response())
}

async fn export(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    let req: PathBody = parse_json(&body)?;
    let manifest = handle.export(&req.path).await?;
    Ok(Json(json!({ "path": req.path, "manifest": manifest })).into_response())
}

async fn import(State(app): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: PathBody = parse_json(&body)?;
    let manager = app.manager.clone();
    let handle = blocking(move || manager.import(&req.path)).await?;
    Ok((StatusCode::CREATED, Json(handle.snapshot())).into_response())
}

async fn ws(State(app): State<AppState>, Path(id): Path<String>, upgrade: WebSocketUpgrade) -> ApiResult<Response> {
    let handle = app.manager.get(&id)?;
    Ok(upgrade.on_upgrade(move |socket| ws_session(socket, handle)))
}

async fn ws_session(mut socket: WebSocket, handle: Arc<SessionHandle>) {
    let mut events = handle.subscribe();
    let hello = json!({ "type": "hello", "snapshot": handle.snapshot_json() });
    if socket.send(Message::Text(hello.to_string().into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            ev = events.recv() => {
                let text = match ev {
                    Ok(ev) => serde_json::to_string(&ev).expect("events always serialize"),
                    Err(RecvError::Lagged(skipped)) => {
                        json!({ "type": "resync", "skipped": skipped, "revision": handle.snapshot().revision }).to_string()
                    }
                    Err(RecvError::Closed) => break,
                };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match serde_json::from_str::<CommandEnvelope>(&text) {
                    Ok(env) => {
                        let command_id = env.command_id.clone();
                        match handle.command(env).await {
                            Ok(ack) => json!({ "type": "ack", "command_id": command_id, "ack": ack }),
                            Err(e) => json!({ "type": "error", "command_id": command_id, "status": status_of(&e).as_u16(), "error": error_body(&e)["error"] }),
                        }
                    }
                    Err(e) => json!({ "type": "error", "status": 422, "error": { "code": "invalid_command", "message": e.to_string() } }),
                };
                if socket.send(Message::Text(reply.to_string().into())).await.is_err() {
                    break;
                }
            }
        }
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

fn query_token(query: Option<&str>) -> Option<String> {
    query?.split('&').find_map(|kv| kv.strip_prefix("token=")).map(str::to_owned)
}

async fn auth(State(app): State<AppState>, req: Request, next: Next) -> Response {
    let Some(expected) = &app.token else { return next.run(req).await };
    let ok = bearer(req.headers()) == Some(expected.as_str())
        || query_token(req.uri().query()).as_deref() == Some(expected.as_str());
    if ok {
        next.run(req).await
    } else {
        let body = json!({ "error": { "code": "unauthorized", "message": "missing or wrong session token" } });
        (StatusCode::UNAUTHORIZED, Json(body)).into_response()
    }
}

/// The `/v1` API. Health is served without a token.
pub fn router(manager: Arc<SessionManager>) -> Router {
    let token = manager.config().token.clone();
    let state = AppState { manager, token };
    let protected = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/import", post(import))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/join", post(join))
        .route("/sessions/{id}/commands", post(command))
        .route("/sessions/{id}/feeds/{feed}/frames", post(ingest))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/history/{index}", get(history_entry))
        .route("/sessions/{id}/rasters/{digest}", get(raster))
        .route("/sessions/{id}/render", get(render))
        .route("/sessions/{id}/jobs/{job}", get(job))
        .route("/sessions/{id}/export", post(export))
        .route("/sessions/{id}/ws", get(ws))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new()
        .nest("/v1", Router::new().route("/health", get(health)).merge(protected))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

