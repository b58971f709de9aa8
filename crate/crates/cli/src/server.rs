//! Session API over an immutable engine. Each session holds only its
//! dialogue state and transcript; requests to one session run in arrival
//! order behind that session's lock.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kecr_core::{Action, DialogueState, Engine, EntityId, ReasoningResult};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

#[derive(Debug, Clone, Serialize)]
pub struct PathStep {
    pub entity: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reasoning {
    pub start: String,
    pub step1: PathStep,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step2: Option<PathStep>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub speaker: &'static str,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<Reasoning>,
}

/// Body of a successful utterance response.
#[derive(Debug, Clone, Serialize)]
pub struct UtteranceReply {
    pub reply: String,
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step1: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step2: Option<String>,
    /// The entity that justifies a recommendation, when there is one.
    pub explanation: Option<String>,
    pub start: Option<String>,
    pub top_k_items: Vec<String>,
    pub scores: Vec<f64>,
}

struct Session {
    state: DialogueState,
    transcript: Vec<TranscriptEntry>,
    last_reply: Option<String>,
}

pub struct AppState {
    engine: Engine,
    seed: u64,
    counter: AtomicU64,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(engine: Engine, seed: u64) -> Self {
        AppState {
            engine,
            seed,
            counter: AtomicU64::new(0),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn name(&self, e: EntityId) -> String {
        self.engine.kg.name(e).to_string()
    }

    fn reasoning(&self, r: &ReasoningResult) -> Reasoning {
        Reasoning {
            start: self.name(r.start),
            step1: PathStep {
                entity: self.name(r.step1.entity),
                score: r.step1.score,
            },
            step2: r.step2.map(|s| PathStep {
                entity: self.name(s.entity),
                score: s.score,
            }),
        }
    }

    async fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().await.get(id).cloned()
    }
}

/// FNV-1a over the session id, so a session's reasoning starts can be
/// replayed from its id alone.
fn id_seed(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn error(status: StatusCode, msg: impl Into<String>, field: Option<&str>) -> Response {
    let mut body = json!({ "error": msg.into() });
    if let Some(f) = field {
        body["field"] = json!(f);
    }
    (status, Json(body)).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown session `{id}`"), None)
}

async fn create_session(State(app): State<Arc<AppState>>) -> Response {
    let n = app.counter.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}-{:012x}", mix(app.seed ^ mix(n)) & 0xffff_ffff_ffff);
    let session = Session {
        state: app.engine.new_state(),
        transcript: Vec::new(),
        last_reply: None,
    };
    app.sessions.lock().await.insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("session {id} opened");
    (StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response()
}

fn parse_text(body: &[u8]) -> Result<String, Box<Response>> {
    let bad = |msg: &str| Box::new(error(StatusCode::BAD_REQUEST, msg, Some("text")));
    let value: Value = serde_json::from_slice(body).map_err(|e| bad(&format!("body is not JSON: {e}")))?;
    match value.get("text") {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(bad("field `text` is empty")),
        Some(_) => Err(bad("field `text` must be a string")),
        None => Err(bad("missing field `text`")),
    }
}

async fn utterance(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    let text = match parse_text(&body) {
        Ok(t) => t,
        Err(r) => return *r,
    };
    let Some(session) = app.session(&id).await else {
        return not_found(&id);
    };
    let mut s = session.lock().await;
    let s = &mut *s;
    let seed = id_seed(&id).wrapping_add(s.state.round as u64);
    let turn = match app.engine.respond(&mut s.state, s.last_reply.as_deref(), &text, seed) {
        Ok(t) => t,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    };
    let reasoning = turn.reasoning.as_ref().map(|r| app.reasoning(r));
    let step2 = reasoning.as_ref().and_then(|r| r.step2.as_ref().map(|p| p.entity.clone()));
    let reply = UtteranceReply {
        reply: turn.reply.clone(),
        action: turn.action,
        step1: reasoning.as_ref().map(|r| r.step1.entity.clone()),
        step2: step2.clone(),
        explanation: if turn.action == Action::Recommend { step2 } else { None },
        start: turn.start.map(|e| app.name(e)),
        top_k_items: turn.top_items.iter().map(|s| app.name(s.entity)).collect(),
        scores: turn.top_items.iter().map(|s| s.score).collect(),
    };
    s.transcript.push(TranscriptEntry {
        speaker: "seeker",
        text,
        action: None,
        reasoning: None,
    });
    s.transcript.push(TranscriptEntry {
        speaker: "system",
        text: turn.reply.clone(),
        action: Some(turn.action),
        reasoning,
    });
    s.last_reply = Some(turn.reply);
    Json(reply).into_response()
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(session) = app.session(&id).await else {
        return not_found(&id);
    };
    let s = session.lock().await;
    let names = |v: &[EntityId]| v.iter().map(|e| app.name(*e)).collect::<Vec<_>>();
    let belief: Vec<EntityId> = s.state.belief.iter().map(|(e, _)| *e).collect();
    Json(json!({
        "session_id": id,
        "transcript": s.transcript,
        "state": {
            "round": s.state.round,
            "mentioned": names(&s.state.mentioned),
            "belief": names(&belief),
            "last_action": s.state.last_action,
        }
    }))
    .into_response()
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match app.sessions.lock().await.remove(&id) {
        Some(_) => {
            log::info!("session {id} closed");
            Json(json!({ "session_id": id, "closed": true })).into_response()
        }
        None => not_found(&id),
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session).delete(delete_session))
        .route("/session/{id}/utterance", post(utterance))
        .with_state(app)
}

pub async fn serve(engine: Engine, seed: u64, port: u16) -> anyhow::Result<()> {
    let app = Arc::new(AppState::new(engine, seed));
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await?;
    Ok(())
}
