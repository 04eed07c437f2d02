//! JSON-over-HTTP chat sessions.
//!
//! ```text
//! POST  /sessions                {preset, persona?}   -> {session_id, persona, controls}
//! POST  /sessions/{id}/message   {text}               -> {response, diagnostics, turn_index}
//! PATCH /sessions/{id}/controls  {weights?, z?, ...}  -> applied settings
//! GET   /sessions/{id}                                -> transcript + running metrics
//! GET   /presets                                      -> builtin presets
//! ```
//!
//! A session handles one message at a time; a second concurrent request on
//! the same session gets 409 instead of waiting.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex, RwLock};

use crate::engine::Engine;
use crate::error::Error;
use crate::features::{FeatureId, FeatureWeights, Weight};
use crate::metrics::{aggregate, MetricsReport, Protocol};
use crate::model::ControlSetting;
use crate::presets::Preset;
use crate::simulator::{LoggedTurn, Session, TurnSettings};

pub struct SessionEntry {
    pub session: Session,
    pub preset: String,
    pub created: u64,
    pub last_active: u64,
}

pub struct AppState {
    pub engine: Arc<Engine>,
    pub presets: Vec<Preset>,
    pub seed: u64,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, presets: Vec<Preset>, seed: u64) -> Arc<Self> {
        Arc::new(AppState {
            engine,
            presets,
            seed,
            sessions: RwLock::new(HashMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`")))
    }

    /// The live entry behind a session id. Holding its lock makes the
    /// session report busy to the API.
    pub async fn session_entry(&self, id: &str) -> Option<Arc<Mutex<SessionEntry>>> {
        self.sessions.read().await.get(id).cloned()
    }

    /// Every session as a chat log, ordered by id.
    pub async fn snapshot(&self) -> Vec<crate::simulator::ChatLog> {
        let sessions = self.sessions.read().await;
        let mut ids: Vec<&String> = sessions.keys().collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            out.push(sessions[id].lock().await.session.to_chatlog(self.seed));
        }
        out
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::BeamExhausted { .. } => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "decode_exhausted", e.to_string())
            }
            Error::UnknownPreset(_) => ApiError::new(StatusCode::BAD_REQUEST, "unknown_preset", e.to_string()),
            Error::Validation(_)
            | Error::Config(_)
            | Error::UnknownControl(_)
            | Error::UnknownBucket { .. } => ApiError::bad_request(e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlsView {
    pub z: BTreeMap<String, u8>,
    pub weights: FeatureWeights,
    pub rerank_weights: FeatureWeights,
}

impl ControlsView {
    fn of(settings: &TurnSettings) -> Self {
        ControlsView {
            z: settings
                .controls
                .iter()
                .map(|c| (c.control.clone(), c.z))
                .collect(),
            weights: settings.weights.clone(),
            rerank_weights: settings.rerank_weights.clone(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    preset: String,
    persona: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub preset: String,
    pub persona: Vec<String>,
    pub controls: ControlsView,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageRequest {
    text: String,
}

/// Partial update; a `null` value removes that weight or control.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlsPatch {
    #[serde(default)]
    weights: BTreeMap<FeatureId, Option<Weight>>,
    #[serde(default)]
    rerank_weights: BTreeMap<FeatureId, Option<Weight>>,
    #[serde(default)]
    z: ZPatch,
}

/// `z` is either per control, or a bare bucket for the one active control.
#[derive(Deserialize)]
#[serde(untagged)]
enum ZPatch {
    Only(u8),
    Each(BTreeMap<String, Option<u8>>),
}

impl Default for ZPatch {
    fn default() -> Self {
        ZPatch::Each(BTreeMap::new())
    }
}

#[derive(Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub preset: String,
    pub persona: Vec<String>,
    pub controls: ControlsView,
    pub transcript: Vec<LoggedTurn>,
    pub metrics: Option<MetricsReport>,
    pub created: u64,
    pub last_active: u64,
}

async fn list_presets(State(state): State<Arc<AppState>>) -> Json<Vec<Preset>> {
    Json(state.presets.clone())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<CreateResponse>, ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let preset = state
        .presets
        .iter()
        .find(|p| p.name == req.preset)
        .ok_or_else(|| ApiError::from(Error::UnknownPreset(req.preset.clone())))?;
    let n = state.counter.fetch_add(1, Ordering::SeqCst);
    let persona = match req.persona {
        Some(p) if p.iter().any(|s| !s.trim().is_empty()) => p,
        Some(_) => return Err(ApiError::bad_request("persona must contain text")),
        None => {
            let mut rng = ChaCha20Rng::seed_from_u64(state.seed.wrapping_add(n));
            state
                .engine
                .archive
                .personas
                .choose(&mut rng)
                .cloned()
                .unwrap_or_default()
        }
    };
    let agent = preset.agent(persona.clone());
    state.engine.model().check_controls(&agent.controls)?;
    let id = format!("s{n}");
    let controls = ControlsView::of(&TurnSettings::of(&agent));
    let t = now();
    let entry = SessionEntry {
        session: Session::new(id.clone(), agent),
        preset: preset.name.clone(),
        created: t,
        last_active: t,
    };
    state
        .sessions
        .write()
        .await
        .insert(id.clone(), Arc::new(Mutex::new(entry)));
    Ok(Json(CreateResponse {
        session_id: id,
        preset: preset.name.clone(),
        persona,
        controls,
    }))
}

fn busy() -> ApiError {
    ApiError::new(
        StatusCode::CONFLICT,
        "busy",
        "another request on this session is in flight",
    )
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: MessageRequest = parse_body(&body)?;
    let slot = state.session(&id).await?;
    let mut guard = slot.try_lock_owned().map_err(|_| busy())?;
    let engine = state.engine.clone();
    let out = tokio::task::spawn_blocking(move || {
        let r = guard.session.step(&engine, &req.text);
        if r.is_ok() {
            guard.last_active = now();
        }
        r
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(out).into_response())
}

fn apply_weights(target: &mut FeatureWeights, patch: BTreeMap<FeatureId, Option<Weight>>) {
    for (id, w) in patch {
        match w {
            Some(w) => target.set(id, w),
            None => {
                target.remove(id);
            }
        }
    }
}

async fn patch_controls(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ControlsView>, ApiError> {
    let patch: ControlsPatch = parse_body(&body)?;
    let slot = state.session(&id).await?;
    let mut guard = slot.try_lock().map_err(|_| busy())?;
    let mut agent = guard.session.agent.clone();
    apply_weights(&mut agent.weights, patch.weights);
    apply_weights(&mut agent.rerank_weights, patch.rerank_weights);
    let mut z: BTreeMap<String, u8> = agent
        .controls
        .iter()
        .map(|c| (c.control.clone(), c.z))
        .collect();
    let changes = match patch.z {
        ZPatch::Each(changes) => changes,
        ZPatch::Only(v) => {
            if z.len() != 1 {
                return Err(Error::Validation(format!(
                    "a bare z needs exactly one active control, session has {}",
                    z.len()
                ))
                .into());
            }
            let control = z.keys().next().cloned().unwrap_or_default();
            BTreeMap::from([(control, Some(v))])
        }
    };
    for (control, value) in changes {
        match value {
            Some(v) => {
                z.insert(control, v);
            }
            None => {
                z.remove(&control);
            }
        }
    }
    agent.controls = z.into_iter().map(|(c, v)| ControlSetting::new(c, v)).collect();
    state.engine.model().check_controls(&agent.controls)?;
    let view = ControlsView::of(&TurnSettings::of(&agent));
    guard.session.agent = agent;
    guard.last_active = now();
    Ok(Json(view))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = state.session(&id).await?;
    let entry = slot.lock().await;
    let diags = entry.session.diagnostics();
    let metrics = if diags.is_empty() {
        None
    } else {
        Some(aggregate(&entry.preset, Protocol::Interactive, &diags)?)
    };
    Ok(Json(SessionView {
        session_id: id,
        preset: entry.preset.clone(),
        persona: entry.session.agent.persona.clone(),
        controls: ControlsView::of(&TurnSettings::of(&entry.session.agent)),
        transcript: entry.session.turns.clone(),
        metrics,
        created: entry.created,
        last_active: entry.last_active,
    }))
}

/// Lets a browser console on another origin call the API.
async fn cors(req: Request, next: Next) -> Response {
    let preflight = req.method() == Method::OPTIONS;
    let mut resp = if preflight {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, PATCH, OPTIONS"),
    );
    h.insert(
        header::ACCESS_CONTROL_ALLOW_HEADERS,
        HeaderValue::from_static("content-type"),
    );
    resp
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/presets", get(list_presets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/message", post(post_message))
        .route("/sessions/{id}/controls", axum::routing::patch(patch_controls))
        .layer(middleware::from_fn(cors))
        .with_state(state)
}

/// Serves until ctrl-c. With `snapshot`, all sessions are written there as
/// chat logs on shutdown.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, snapshot: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(path) = snapshot {
        let logs = state.snapshot().await;
        crate::simulator::write_chatlogs(&path, &logs)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        log::info!("wrote {} sessions to {}", logs.len(), path.display());
    }
    Ok(())
}
