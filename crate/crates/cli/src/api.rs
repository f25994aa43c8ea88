//! HTTP facade over the orchestrator: session CRUD, human input, an SSE
//! event stream and artifact download.
//!
//! Sessions are driven in background tasks with a handler that parks them at
//! every interaction point. Posting clarifications or feedback records the
//! input and kicks off another drive.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::broadcast::Receiver;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use t2i_agents::artifact::{decode_png, is_valid_hash, MAX_IMAGE_BYTES, PNG_MEDIA_TYPE};
use t2i_agents::event::{error_category, ErrorPayload};
use t2i_agents::gateway::imaging::b64_decode;
use t2i_agents::orchestrator::Feedback;
use t2i_agents::{
    ArtifactRef, ClarificationAnswer, CreativityLevel, Error, EventKind, EventRecord, GenerationRequest,
    Orchestrator, RunOverrides, SessionId, SessionState, SessionStatus, Store, SuspendingHandler,
};

/// How long a submission waits for a running step to release the session.
const BUSY_WAIT: Duration = Duration::from_secs(5);
const BUSY_POLL: Duration = Duration::from_millis(20);
const REPLAY_CACHE_LIMIT: usize = 4096;
const EXCERPT_CHARS: usize = 80;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    category: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, category: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            category,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn body(&self) -> Value {
        json!({"error": self.category, "message": self.message})
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_)
            | Error::UnknownElement(_)
            | Error::DimensionMismatch { .. }
            | Error::Image(_)
            | Error::Arity { .. } => StatusCode::BAD_REQUEST,
            Error::State(_) | Error::Busy(_) => StatusCode::CONFLICT,
            Error::UnknownSession(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, error_category(&e), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Read-only projection of a session for listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: SessionId,
    pub status: SessionStatus,
    pub prompt_excerpt: String,
    pub turns: usize,
    pub last_overall: Option<f64>,
    pub created: DateTime<Utc>,
}

impl SessionSummary {
    pub fn of(state: &SessionState, created: DateTime<Utc>) -> Self {
        let prompt = state.request.prompt.trim();
        let mut excerpt: String = prompt.chars().take(EXCERPT_CHARS).collect();
        if prompt.chars().count() > EXCERPT_CHARS {
            excerpt.push('…');
        }
        SessionSummary {
            id: state.id.clone(),
            status: state.status,
            prompt_excerpt: excerpt,
            turns: state.turns.len(),
            last_overall: state.last_turn().map(|t| t.evaluation.overall),
            created,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    prompt: String,
    #[serde(default)]
    creativity: Option<String>,
    #[serde(default)]
    interactive: bool,
    #[serde(default)]
    ref_image_b64: Option<String>,
    #[serde(default)]
    threshold: Option<f64>,
    #[serde(default)]
    max_regen: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClarificationsBody {
    answers: Vec<ClarificationAnswer>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    accept: bool,
    #[serde(default)]
    regenerate: bool,
    #[serde(default)]
    mask_b64: Option<String>,
}

#[derive(Clone)]
struct Cached {
    status: StatusCode,
    body: Value,
}

#[derive(Default)]
struct ReplayCache {
    entries: HashMap<String, Cached>,
    order: VecDeque<String>,
}

impl ReplayCache {
    fn insert(&mut self, key: String, value: Cached) {
        if self.entries.insert(key.clone(), value).is_none() {
            self.order.push_back(key);
        }
        while self.order.len() > REPLAY_CACHE_LIMIT {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
    }
}

pub struct ApiState {
    orch: Arc<Orchestrator>,
    replays: Mutex<ReplayCache>,
    /// Held while a keyed request executes so a concurrent retry waits for
    /// the first attempt's outcome instead of repeating it.
    keyed: tokio::sync::Mutex<()>,
}

impl ApiState {
    pub fn new(orch: Arc<Orchestrator>) -> Arc<Self> {
        Arc::new(ApiState {
            orch,
            replays: Mutex::new(ReplayCache::default()),
            keyed: tokio::sync::Mutex::new(()),
        })
    }

    fn store(&self) -> &Store {
        self.orch.store()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ApiOptions {
    pub cors_origins: Vec<String>,
    /// Static files (the browser UI) served for non-API paths.
    pub ui_dir: Option<PathBuf>,
}

pub fn router(orch: Arc<Orchestrator>, opts: &ApiOptions) -> Router {
    let state = ApiState::new(orch);
    let mut app = Router::new()
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/clarifications", post(post_clarifications))
        .route("/api/sessions/{id}/feedback", post(post_feedback))
        .route("/api/sessions/{id}/events", get(session_events))
        .route("/api/artifacts/{hash}", get(get_artifact))
        // Base64 inflates images by a third; leave room for JSON around it.
        .layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES * 2))
        .with_state(state);
    if let Some(dir) = &opts.ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if let Some(cors) = cors_layer(&opts.cors_origins) {
        app = app.layer(cors);
    }
    app
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::from(Any)
    } else {
        let list: Vec<HeaderValue> = origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        AllowOrigin::list(list)
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods(Any)
            .allow_headers(Any),
    )
}

/// Drive a session in the background until it finishes or parks.
pub fn spawn_drive(orch: Arc<Orchestrator>, id: SessionId) {
    tokio::spawn(async move {
        match orch.drive(&id, &SuspendingHandler).await {
            Ok(outcome) => tracing::debug!(session = %id, ?outcome, "drive stopped"),
            Err(e) => tracing::warn!(session = %id, error = %e, "drive failed"),
        }
    });
}

/// Restart sessions a previous process left mid-flight. Parked sessions
/// simply park again.
pub fn resume_incomplete(orch: &Arc<Orchestrator>) -> t2i_agents::Result<usize> {
    let mut n = 0;
    for entry in orch.store().list_sessions()? {
        match orch.store().replay_session(&entry.id) {
            Ok(state) if !state.status.is_terminal() => {
                spawn_drive(orch.clone(), entry.id);
                n += 1;
            }
            Ok(_) => {}
            Err(e) => tracing::warn!(session = %entry.id, error = %e, "cannot replay session"),
        }
    }
    Ok(n)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn parse_id(raw: &str) -> ApiResult<SessionId> {
    SessionId::parse(raw).map_err(|_| ApiError::not_found(format!("unknown session `{raw}`")))
}

fn existing_session(state: &ApiState, raw: &str) -> ApiResult<SessionId> {
    let id = parse_id(raw)?;
    if !state.store().session_exists(&id) {
        return Err(ApiError::not_found(format!("unknown session `{id}`")));
    }
    Ok(id)
}

fn decode_png_field(field: &str, b64: &str) -> ApiResult<Vec<u8>> {
    let bytes = b64_decode(b64).map_err(|e| ApiError::bad_request(format!("{field}: invalid base64: {e}")))?;
    decode_png(&bytes).map_err(|e| ApiError::bad_request(format!("{field}: not a PNG image: {e}")))?;
    Ok(bytes)
}

/// Run `f`, or replay its earlier successful response when the request
/// carries an `Idempotency-Key` already seen for this route.
async fn idempotent<F, Fut>(state: &ApiState, headers: &HeaderMap, scope: String, f: F) -> Response
where
    F: FnOnce() -> Fut,
    Fut: Future<Output = ApiResult<(StatusCode, Value)>>,
{
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .filter(|k| !k.is_empty())
        .map(|k| format!("{scope}\n{k}"));
    let Some(key) = key else {
        return respond(f().await);
    };
    let _guard = state.keyed.lock().await;
    if let Some(c) = state.replays.lock().unwrap().entries.get(&key).cloned() {
        return (c.status, Json(c.body)).into_response();
    }
    let result = f().await;
    if let Ok((status, body)) = &result {
        state.replays.lock().unwrap().insert(
            key,
            Cached {
                status: *status,
                body: body.clone(),
            },
        );
    }
    respond(result)
}

fn respond(result: ApiResult<(StatusCode, Value)>) -> Response {
    match result {
        Ok((status, body)) => (status, Json(body)).into_response(),
        Err(e) => e.into_response(),
    }
}

/// Retry a submission while a background step holds the session.
async fn wait_unbusy<T>(mut f: impl FnMut() -> t2i_agents::Result<T>) -> t2i_agents::Result<T> {
    let deadline = tokio::time::Instant::now() + BUSY_WAIT;
    loop {
        match f() {
            Err(Error::Busy(_)) if tokio::time::Instant::now() < deadline => {
                tokio::time::sleep(BUSY_POLL).await;
            }
            other => return other,
        }
    }
}

async fn create_session(State(state): State<Arc<ApiState>>, headers: HeaderMap, body: Bytes) -> Response {
    let st = state.clone();
    idempotent(&state, &headers, "POST /api/sessions".into(), || async move {
        let req: CreateBody = parse_body(&body)?;
        let level = match req.creativity.as_deref() {
            Some(s) => s
                .parse::<CreativityLevel>()
                .map_err(|_| ApiError::bad_request(format!("creativity `{s}` is not low, medium or high")))?,
            None => st.orch.config().creativity_default,
        };
        let mut request = GenerationRequest::new(req.prompt, level).interactive(req.interactive);
        if req.threshold.is_some() || req.max_regen.is_some() {
            request = request.with_overrides(RunOverrides {
                threshold: req.threshold,
                max_regen: req.max_regen,
            });
        }
        request.validate()?;
        let mut reference: Option<ArtifactRef> = None;
        if let Some(b64) = &req.ref_image_b64 {
            let bytes = decode_png_field("ref_image_b64", b64)?;
            let r = st.store().store_artifact(&bytes, PNG_MEDIA_TYPE)?;
            request = request.with_reference(r.clone());
            reference = Some(r);
        }
        let id = st.orch.create_session(request, None)?;
        spawn_drive(st.orch.clone(), id.clone());
        let mut body = json!({"session_id": id});
        if let Some(r) = reference {
            body["reference_image"] = serde_json::to_value(r).expect("artifact ref serializes");
        }
        Ok((StatusCode::CREATED, body))
    })
    .await
}

async fn list_sessions(State(state): State<Arc<ApiState>>) -> ApiResult<Json<Vec<SessionSummary>>> {
    let mut out = Vec::new();
    for entry in state.store().list_sessions()? {
        match state.store().replay_session(&entry.id) {
            Ok(s) => out.push(SessionSummary::of(&s, entry.created)),
            Err(e) => tracing::warn!(session = %entry.id, error = %e, "skipping unreadable session"),
        }
    }
    Ok(Json(out))
}

async fn get_session(State(state): State<Arc<ApiState>>, Path(raw): Path<String>) -> ApiResult<Json<SessionState>> {
    let id = existing_session(&state, &raw)?;
    Ok(Json(state.store().replay_session(&id)?))
}

async fn post_clarifications(
    State(state): State<Arc<ApiState>>,
    Path(raw): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let st = state.clone();
    let scope = format!("POST /api/sessions/{raw}/clarifications");
    idempotent(&state, &headers, scope, || async move {
        let id = existing_session(&st, &raw)?;
        let req: ClarificationsBody = parse_body(&body)?;
        wait_unbusy(|| st.orch.submit_answers(&id, req.answers.clone())).await?;
        spawn_drive(st.orch.clone(), id.clone());
        Ok((StatusCode::ACCEPTED, json!({"session_id": id})))
    })
    .await
}

async fn post_feedback(
    State(state): State<Arc<ApiState>>,
    Path(raw): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let st = state.clone();
    let scope = format!("POST /api/sessions/{raw}/feedback");
    idempotent(&state, &headers, scope, || async move {
        let id = existing_session(&st, &raw)?;
        let req: FeedbackBody = parse_body(&body)?;
        let status = st.store().replay_session(&id)?.status;
        if status != SessionStatus::AwaitingFeedback {
            return Err(Error::state(format!("session is {status:?}, not AWAITING_FEEDBACK")).into());
        }
        let canvas_mask = match &req.mask_b64 {
            Some(b64) => {
                let bytes = decode_png_field("mask_b64", b64)?;
                Some(st.store().store_artifact(&bytes, PNG_MEDIA_TYPE)?)
            }
            None => None,
        };
        let feedback = Feedback {
            text: req.text.filter(|t| !t.trim().is_empty()),
            accept: req.accept,
            regenerate: req.regenerate,
            canvas_mask: canvas_mask.clone(),
        };
        wait_unbusy(|| st.orch.submit_feedback(&id, feedback.clone())).await?;
        spawn_drive(st.orch.clone(), id.clone());
        let mut body = json!({"session_id": id});
        if let Some(m) = canvas_mask {
            body["mask"] = serde_json::to_value(m).expect("artifact ref serializes");
        }
        Ok((StatusCode::ACCEPTED, body))
    })
    .await
}

async fn get_artifact(State(state): State<Arc<ApiState>>, Path(hash): Path<String>) -> ApiResult<Response> {
    let hash = hash.trim_end_matches(".png");
    if !is_valid_hash(hash) || !state.store().has_artifact(hash) {
        return Err(ApiError::not_found(format!("unknown artifact `{hash}`")));
    }
    let bytes = state.store().load_artifact(hash)?;
    Ok((
        [
            (header::CONTENT_TYPE, PNG_MEDIA_TYPE),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}

/// A record after which no more events will be appended.
pub fn is_final(rec: &EventRecord) -> bool {
    match rec.kind {
        EventKind::Done => true,
        EventKind::Error => rec.decode::<ErrorPayload>().map(|p| p.fatal).unwrap_or(true),
        _ => false,
    }
}

struct Tail {
    store_root: Arc<Orchestrator>,
    id: SessionId,
    rx: Receiver<EventRecord>,
    backlog: VecDeque<EventRecord>,
    last_sent: u64,
    finished: bool,
}

impl Tail {
    fn reload(&mut self) -> t2i_agents::Result<()> {
        let last = self.last_sent;
        self.backlog = self
            .store_root
            .store()
            .read_events(&self.id)?
            .into_iter()
            .filter(|e| e.seq > last)
            .collect();
        Ok(())
    }

    async fn next_record(&mut self) -> Option<EventRecord> {
        if self.finished {
            return None;
        }
        loop {
            if let Some(rec) = self.backlog.pop_front() {
                if rec.seq <= self.last_sent {
                    continue;
                }
                self.last_sent = rec.seq;
                self.finished = is_final(&rec);
                return Some(rec);
            }
            match self.rx.recv().await {
                Ok(rec) if rec.seq <= self.last_sent => {}
                Ok(rec) if rec.seq == self.last_sent + 1 => self.backlog.push_back(rec),
                // A gap or a lagged receiver: the log on disk is authoritative.
                Ok(_) | Err(RecvError::Lagged(_)) => {
                    if let Err(e) = self.reload() {
                        tracing::warn!(session = %self.id, error = %e, "event stream reload failed");
                        return None;
                    }
                }
                Err(RecvError::Closed) => return None,
            }
        }
    }
}

fn sse_event(rec: &EventRecord) -> Event {
    Event::default()
        .id(rec.seq.to_string())
        .event(rec.kind.as_str())
        .json_data(rec)
        .expect("event record serializes")
}

async fn session_events(
    State(state): State<Arc<ApiState>>,
    Path(raw): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let id = existing_session(&state, &raw)?;
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .unwrap_or(0);
    // Subscribe before reading the file so nothing falls between the two.
    let rx = state.store().subscribe(&id)?;
    let mut tail = Tail {
        store_root: state.orch.clone(),
        id,
        rx,
        backlog: VecDeque::new(),
        last_sent: after,
        finished: false,
    };
    tail.reload()?;
    let stream = futures::stream::unfold(tail, |mut tail| async move {
        let rec = tail.next_record().await?;
        Some((Ok(sse_event(&rec)), tail))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_statuses() {
        let s = |e: Error| ApiError::from(e).status;
        assert_eq!(s(Error::validation("x")), StatusCode::BAD_REQUEST);
        assert_eq!(s(Error::UnknownElement("x".into())), StatusCode::BAD_REQUEST);
        assert_eq!(s(Error::state("x")), StatusCode::CONFLICT);
        assert_eq!(s(Error::Busy("x".into())), StatusCode::CONFLICT);
        assert_eq!(s(Error::UnknownSession("x".into())), StatusCode::NOT_FOUND);
    }

    #[test]
    fn replay_cache_is_bounded() {
        let mut c = ReplayCache::default();
        for i in 0..REPLAY_CACHE_LIMIT + 10 {
            c.insert(
                i.to_string(),
                Cached {
                    status: StatusCode::OK,
                    body: Value::Null,
                },
            );
        }
        assert_eq!(c.entries.len(), REPLAY_CACHE_LIMIT);
        assert!(!c.entries.contains_key("0"));
    }
}
