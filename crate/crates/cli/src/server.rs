//! HTTP front end for the orchestrator.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use barbot_core::corpus::{save_recipe, Recipe};
use barbot_core::orchestrator::{Engine, Intent, OrchestratorError, OrderOptions, Session, SessionState, Stimulus};
use barbot_core::perception::{parse_document, snapshot_from_document, PerceptionConfig};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::watch;

/// Longest a single events request may wait for news.
pub const MAX_WAIT_MS: u64 = 60_000;

struct Slot {
    session: Mutex<Session>,
    /// Number of events logged so far.
    logged: watch::Sender<u64>,
}

impl Slot {
    fn lock(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, s: &Session) {
        self.logged.send_replace(s.events().len() as u64);
    }
}

pub struct AppState {
    engine: Engine,
    perception: PerceptionConfig,
    recipes_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(engine: Engine, perception: PerceptionConfig, recipes_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState { engine, perception, recipes_dir, sessions: RwLock::default(), next_id: AtomicU64::new(1) })
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/orders", post(place_order))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/answers", post(answer))
        .route("/v1/sessions/{id}/abort", post(abort))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/recipes", get(list_recipes).post(add_recipe))
        .route("/v1/inventory", put(put_inventory).get(get_inventory))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, kind, message: message.into(), details: None }
    }

    fn unprocessable(kind: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "kind": self.kind, "message": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(json!({ "error": body }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "bad_request", r.body_text())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let (status, kind) = match e {
            OrchestratorError::IllegalStimulus { .. } => (StatusCode::CONFLICT, "illegal_stimulus"),
            OrchestratorError::UnknownAnomalyId(_) => (StatusCode::NOT_FOUND, "unknown_anomaly"),
            OrchestratorError::IllegalOption { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "illegal_option"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

/// Proceeds one transition at a time so readers see events as they land.
fn drive(engine: &Engine, slot: &Slot) {
    loop {
        let mut s = slot.lock();
        if s.state().is_terminal() || s.state() == SessionState::AwaitingUser {
            return;
        }
        engine.advance(&mut s, &Stimulus::Proceed).expect("proceed is legal outside awaiting_user");
        slot.publish(&s);
    }
}

fn spawn_drive(state: Arc<AppState>, slot: Arc<Slot>) {
    tokio::task::spawn_blocking(move || drive(&state.engine, &slot));
}

#[derive(Debug, Deserialize)]
struct OrderBody {
    text: String,
    seed: Option<u64>,
    unattended: Option<bool>,
}

async fn place_order(
    State(state): State<Arc<AppState>>,
    body: Result<Json<OrderBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    if body.text.trim().is_empty() {
        return Err(ApiError::unprocessable("empty_order", "order text is empty"));
    }
    let defaults = state.engine.default_options();
    let options = OrderOptions {
        seed: body.seed.unwrap_or(defaults.seed),
        unattended: body.unattended.unwrap_or(defaults.unattended),
    };
    let id = format!("s-{:06}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let session = state.engine.open(id.clone(), &body.text, options);
    let listing = *session.intent() == Intent::ListRecipes;
    let (logged, _) = watch::channel(session.events().len() as u64);
    let slot = Arc::new(Slot { session: Mutex::new(session), logged });
    state.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), slot.clone());
    spawn_drive(state.clone(), slot);

    let mut out = json!({ "session_id": id });
    if listing {
        out["recipes"] = state.engine.corpus().read(|idx| idx.recipes().map(|r| json!({ "id": r.id, "name": r.name })).collect());
    }
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let view = slot.lock().view();
    Ok(Json(view).into_response())
}

#[derive(Debug, Deserialize)]
struct AnswerBody {
    anomaly_id: String,
    choice: String,
}

async fn answer(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<AnswerBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    let slot = state.slot(&id)?;
    let view = {
        let mut s = slot.lock();
        state.engine.advance(&mut s, &Stimulus::Answer { anomaly_id: body.anomaly_id, choice: body.choice })?;
        slot.publish(&s);
        s.view()
    };
    spawn_drive(state.clone(), slot);
    Ok(Json(view).into_response())
}

async fn abort(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let mut s = slot.lock();
    state.engine.advance(&mut s, &Stimulus::Abort)?;
    slot.publish(&s);
    Ok(Json(s.view()).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    /// How long to hold the request open when nothing new has happened.
    #[serde(default)]
    wait_ms: u64,
}

/// Events with `seq > since`, one JSON object per line. With `wait_ms` the
/// request is held until something new arrives, the session ends, or the wait
/// runs out.
async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let mut rx = slot.logged.subscribe();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms.min(MAX_WAIT_MS));
    loop {
        let (body, session_state, next) = {
            let s = slot.lock();
            let mut body = Vec::new();
            for ev in s.events_since(q.since) {
                serde_json::to_writer(&mut body, ev).expect("event serializes");
                body.push(b'\n');
            }
            (body, s.state(), s.events().len() as u64)
        };
        if !body.is_empty() || session_state.is_terminal() || tokio::time::Instant::now() >= deadline {
            let mut resp = (StatusCode::OK, Bytes::from(body)).into_response();
            let h = resp.headers_mut();
            h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
            h.insert("x-session-state", HeaderValue::from_static(session_state.as_str()));
            h.insert("x-next-since", HeaderValue::from(next.max(q.since)));
            return Ok(resp);
        }
        let _ = tokio::time::timeout_at(deadline, rx.changed()).await;
    }
}

#[derive(Debug, Deserialize)]
struct RecipeQuery {
    q: Option<String>,
    k: Option<usize>,
}

/// Every recipe, or the top `k` hits for `q`.
async fn list_recipes(State(state): State<Arc<AppState>>, Query(query): Query<RecipeQuery>) -> Json<Value> {
    state.engine.corpus().read(|idx| match &query.q {
        Some(q) => Json(json!(idx
            .retrieve(q, query.k.unwrap_or(5))
            .into_iter()
            .map(|h| {
                let name = idx.get(&h.recipe_id).map(|r| r.name.clone()).unwrap_or_default();
                json!({ "rank": h.rank, "recipe_id": h.recipe_id, "name": name, "score": h.score })
            })
            .collect::<Vec<_>>())),
        None => Json(json!(idx.recipes().collect::<Vec<_>>())),
    })
}

async fn add_recipe(
    State(state): State<Arc<AppState>>,
    body: Result<Json<Recipe>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(recipe) = body?;
    let recipe = recipe.normalized().map_err(|e| ApiError::unprocessable("invalid_recipe", e.to_string()))?;
    state.engine.corpus().write(|idx| idx.add(recipe.clone())).map_err(|e| {
        ApiError::new(StatusCode::CONFLICT, "duplicate_recipe", e.to_string())
    })?;
    if let Some(dir) = &state.recipes_dir {
        save_recipe(dir, &recipe).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()))?;
    }
    Ok((StatusCode::CREATED, Json(recipe)).into_response())
}

async fn put_inventory(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let doc = parse_document(&body).map_err(|e| {
        let mut err = ApiError::unprocessable("invalid_detections", e.to_string());
        if let Some(field) = e.field() {
            err.details = Some(json!({ "field": field }));
        }
        err
    })?;
    let snapshot =
        snapshot_from_document(&doc, &state.perception).map_err(|e| ApiError::unprocessable("invalid_detections", e.to_string()))?;
    state.engine.inventory().store(snapshot.clone());
    Ok(Json(snapshot).into_response())
}

async fn get_inventory(State(state): State<Arc<AppState>>) -> Response {
    Json(state.engine.inventory().load().as_ref().clone()).into_response()
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, bind: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
