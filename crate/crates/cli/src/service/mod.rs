//! HTTP session service: a human plays the interlocutor while the engine
//! asks questions and narrows down their persona.
//!
//! Sessions live in memory. Mutations of one session are serialized by a
//! per-session lock; reads take a snapshot and never wait on planning.
//! Ended sessions are appended to a JSONL transcript log.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use persona_discovery::responder::TabularWorldFile;
use persona_discovery::{FreeTextScorer, PlannerParams, Utterance};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::config::{read, Source, UniverseSource, World, WorldConfig};
use crate::error::{CliError, CliResult};

mod error;
mod session;

pub use error::ApiError;
pub use session::{
    replay_transcript, BeliefSnapshot, Ending, Mode, ReplyOption, ReplyRequest, Session,
    SessionSettings, SubsetProbability, TranscriptRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEntry {
    pub id: String,
    #[serde(flatten)]
    pub world: WorldConfig,
    /// Bot utterance pool; the world's own when unset.
    #[serde(default)]
    pub pool: Option<Source<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub worlds: Vec<WorldEntry>,
    /// World used when a create request names none; the first when unset.
    pub default_world: Option<String>,
    pub planner: PlannerParams,
    pub top_m: usize,
    pub freetext: FreeTextScorer,
}

/// Two facts and one question whose "yes" is nine times likelier under the
/// first fact than the second.
pub fn binary_world() -> WorldConfig {
    WorldConfig::Tabular {
        universe: UniverseSource::Texts(vec!["i have a dog".into(), "i have a cat".into()]),
        table: Source::Inline(TabularWorldFile {
            probes: vec!["do you have a dog?".into()],
            responses: vec!["yes, a dog".into(), "no".into()],
            table: vec![vec![vec![0.9, 0.1], vec![0.1, 0.9]]],
        }),
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            worlds: vec![
                WorldEntry {
                    id: "synthetic".into(),
                    world: WorldConfig::default(),
                    pool: None,
                },
                WorldEntry {
                    id: "binary".into(),
                    world: binary_world(),
                    pool: None,
                },
            ],
            default_world: None,
            planner: PlannerParams::default(),
            top_m: 5,
            freetext: FreeTextScorer::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> CliResult<(Self, PathBuf)> {
        let config: Self = serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Config(format!("failed to parse {}: {e}", path.display())))?;
        Ok((config, path.parent().map(Path::to_path_buf).unwrap_or_default()))
    }
}

type Slot = Arc<SessionSlot>;

pub struct SessionSlot {
    write: tokio::sync::Mutex<()>,
    state: RwLock<Session>,
}

impl SessionSlot {
    fn read(&self) -> Session {
        self.state.read().expect("session lock poisoned").clone()
    }

    fn commit(&self, next: Session) {
        *self.state.write().expect("session lock poisoned") = next;
    }
}

pub struct AppState {
    worlds: BTreeMap<String, Arc<World>>,
    default_world: String,
    settings: SessionSettings,
    sessions: RwLock<HashMap<String, Slot>>,
    log_path: PathBuf,
    log_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(config: &ServiceConfig, base: &Path, log_path: PathBuf) -> CliResult<Self> {
        if config.worlds.is_empty() {
            return Err(CliError::Config("the service needs at least one world".into()));
        }
        if config.top_m == 0 {
            return Err(CliError::Config("top_m must be at least 1".into()));
        }
        config.planner.validate()?;
        let mut worlds = BTreeMap::new();
        for entry in &config.worlds {
            let experiment = crate::config::ExperimentConfig {
                world: entry.world.clone(),
                pool: entry.pool.clone(),
                ..Default::default()
            };
            let world = experiment.build_world(base)?;
            if worlds.insert(entry.id.clone(), Arc::new(world)).is_some() {
                return Err(CliError::Config(format!("duplicate world id {:?}", entry.id)));
            }
        }
        let default_world = config.default_world.clone().unwrap_or_else(|| config.worlds[0].id.clone());
        if !worlds.contains_key(&default_world) {
            return Err(CliError::Config(format!("default_world {default_world:?} is not configured")));
        }
        Ok(Self {
            worlds,
            default_world,
            settings: SessionSettings {
                planner: config.planner.clone(),
                top_m: config.top_m,
                scorer: config.freetext.clone(),
            },
            sessions: RwLock::new(HashMap::new()),
            log_path,
            log_lock: tokio::sync::Mutex::new(()),
        })
    }

    pub fn world(&self, id: &str) -> Option<&Arc<World>> {
        self.worlds.get(id)
    }

    pub fn settings(&self) -> &SessionSettings {
        &self.settings
    }

    fn slot(&self, id: &str) -> Result<Slot, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session_not_found", format!("no session {id:?}")))
    }

    fn world_of(&self, session: &Session) -> Result<Arc<World>, ApiError> {
        self.world(&session.world_id)
            .cloned()
            .ok_or_else(|| ApiError::internal(format!("world {:?} vanished", session.world_id)))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/universe", get(universe))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/reply", post(post_reply))
        .route("/sessions/{id}/guess", post(guess))
        .route("/sessions/{id}/end", post(end_session))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Blocks on the service until Ctrl-C.
pub fn serve(config: (ServiceConfig, PathBuf), bind: &str, log_path: PathBuf) -> CliResult<()> {
    let (config, base) = config;
    let state = Arc::new(AppState::new(&config, &base, log_path)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {bind}: {e}")))?;
        log::info!("listening on {bind}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Runtime(format!("server error: {e}")))
    })
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("bad_request", e.body_text()))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    worlds: Vec<String>,
    sessions: usize,
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        worlds: app.worlds.keys().cloned().collect(),
        sessions: app.sessions.read().expect("session table poisoned").len(),
    })
}

#[derive(Deserialize)]
struct UniverseQuery {
    world: Option<String>,
}

#[derive(Serialize)]
struct UniverseView<'a> {
    world: &'a str,
    facts: &'a [persona_discovery::Fact],
}

async fn universe(
    State(app): State<Arc<AppState>>,
    Query(q): Query<UniverseQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let id = q.world.unwrap_or_else(|| app.default_world.clone());
    let world = app
        .world(&id)
        .ok_or_else(|| ApiError::not_found("unknown_world", format!("no world {id:?}")))?;
    let view = UniverseView {
        world: &id,
        facts: world.universe.facts(),
    };
    serde_json::to_value(view)
        .map(Json)
        .map_err(|e| ApiError::internal(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub k: usize,
    #[serde(default)]
    pub mode: Mode,
    /// World id; the service default when unset.
    #[serde(default)]
    pub responder_config_id: Option<String>,
    /// Planner seed; random when unset.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub world: String,
    pub mode: Mode,
    pub k: usize,
    pub opening_question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply_options: Option<Vec<ReplyOption>>,
    pub belief: BeliefSnapshot,
    pub created_at: String,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let req = body(payload)?;
    let world_id = req.responder_config_id.clone().unwrap_or_else(|| app.default_world.clone());
    let world = app
        .world(&world_id)
        .cloned()
        .ok_or_else(|| ApiError::bad_request("unknown_world", format!("no responder config {world_id:?}")))?;
    let id = uuid::Uuid::new_v4().to_string();
    let seed = req.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
    let app2 = Arc::clone(&app);
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || {
        Session::create(sid, &world_id, &world, req.k, req.mode, seed, &app2.settings)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let response = CreateResponse {
        session_id: id.clone(),
        world: session.world_id.clone(),
        mode: session.mode,
        k: session.k,
        opening_question: session.pending.clone(),
        reply_options: session.reply_options(),
        belief: session.snapshot().clone(),
        created_at: session.created_at.clone(),
    };
    app.sessions.write().expect("session table poisoned").insert(
        id,
        Arc::new(SessionSlot {
            write: tokio::sync::Mutex::new(()),
            state: RwLock::new(session),
        }),
    );
    Ok((StatusCode::CREATED, Json(response)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub world: String,
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub created_at: String,
    pub updated_at: String,
    pub ended: bool,
    pub history: Vec<Utterance>,
    /// The question awaiting a reply; `null` once the session has ended.
    pub pending_question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply_options: Option<Vec<ReplyOption>>,
    pub belief: BeliefSnapshot,
    pub snapshots: Vec<BeliefSnapshot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ending: Option<Ending>,
}

fn view(s: &Session) -> SessionView {
    let live = s.ended.is_none();
    SessionView {
        session_id: s.id.clone(),
        world: s.world_id.clone(),
        mode: s.mode,
        k: s.k,
        seed: s.seed,
        created_at: s.created_at.clone(),
        updated_at: s.updated_at.clone(),
        ended: !live,
        history: s.history.turns().to_vec(),
        pending_question: live.then(|| s.pending.clone()),
        reply_options: if live { s.reply_options() } else { None },
        belief: s.snapshot().clone(),
        snapshots: s.snapshots.clone(),
        ending: s.ended.clone(),
    }
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(view(&app.slot(&id)?.read())))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReplyResponse {
    pub session_id: String,
    pub exchange: usize,
    pub belief: BeliefSnapshot,
    pub next_question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply_options: Option<Vec<ReplyOption>>,
}

async fn post_reply(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<ReplyRequest>, JsonRejection>,
) -> Result<Json<ReplyResponse>, ApiError> {
    let slot = app.slot(&id)?;
    let req = body(payload)?;
    let _writer = slot.write.lock().await;
    let current = slot.read();
    let world = app.world_of(&current)?;
    let app2 = Arc::clone(&app);
    let next = tokio::task::spawn_blocking(move || current.reply(&world, &req, &app2.settings))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let response = ReplyResponse {
        session_id: next.id.clone(),
        exchange: next.history.exchange_count(),
        belief: next.snapshot().clone(),
        next_question: next.pending.clone(),
        reply_options: next.reply_options(),
    };
    slot.commit(next);
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GuessRequest {
    #[serde(default = "default_m")]
    m: usize,
}

fn default_m() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Guess {
    pub subset: Vec<usize>,
    pub facts: Vec<String>,
    pub probability: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GuessResponse {
    pub session_id: String,
    pub m: usize,
    pub top: Vec<Guess>,
}

async fn guess(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<GuessRequest>, JsonRejection>,
) -> Result<Json<GuessResponse>, ApiError> {
    let slot = app.slot(&id)?;
    let req = body(payload)?;
    if req.m == 0 {
        return Err(ApiError::bad_request("invalid_m", "m must be at least 1"));
    }
    let session = slot.read();
    let universe = &session.belief.universe().clone();
    let top = session
        .belief
        .subset_posterior()?
        .top(req.m)
        .into_iter()
        .map(|(subset, probability)| Guess {
            facts: subset
                .iter()
                .map(|&f| universe.fact(f).map(|x| x.text.clone()).unwrap_or_default())
                .collect(),
            subset,
            probability,
        })
        .collect();
    Ok(Json(GuessResponse {
        session_id: id,
        m: req.m,
        top,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EndResponse {
    pub session_id: String,
    pub final_score: f64,
    pub ended_at: String,
    pub exchanges: usize,
    pub transcript: Vec<Utterance>,
}

async fn end_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<EndResponse>, ApiError> {
    let slot = app.slot(&id)?;
    let _writer = slot.write.lock().await;
    let mut session = slot.read();
    if session.ended.is_some() {
        return Err(ApiError::conflict("session_ended", "the session has already ended"));
    }
    let ending = Ending {
        ended_at: session::now(),
        final_score: session.belief.discovery_score()?.nats(),
    };
    let record = TranscriptRecord::of(&session, &ending);
    append_log(&app, &record).await?;
    session.ended = Some(ending.clone());
    session.updated_at = ending.ended_at.clone();
    let response = EndResponse {
        session_id: id,
        final_score: ending.final_score,
        ended_at: ending.ended_at,
        exchanges: session.history.exchange_count(),
        transcript: record.transcript,
    };
    slot.commit(session);
    Ok(Json(response))
}

async fn append_log(app: &AppState, record: &TranscriptRecord) -> Result<(), ApiError> {
    let mut line = serde_json::to_vec(record).map_err(|e| ApiError::internal(e.to_string()))?;
    line.push(b'\n');
    let _guard = app.log_lock.lock().await;
    let path = &app.log_path;
    let write = || -> std::io::Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?
            .write_all(&line)
    };
    write().map_err(|e| ApiError::internal(format!("cannot append to {}: {e}", path.display())))
}
