//! Local service for the companion UI.
//!
//! Routes:
//! - `POST /query` — run one query against a session
//! - `GET /session/{id}/transcripts` — transcripts in submission order
//! - `GET /sessions` — session ids, frame timestamps and camera sizes
//! - `GET /crops?frame_id&u&v[&session_id]` — the crop pyramid as base64 PNGs
//! - `GET /frames/{id}[?session_id]` — a frame as PNG
//! - `GET /events` (WebSocket) — stage start/end and completion records
//!
//! Every session has one worker thread; queries on a session run strictly
//! in the order they were accepted.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc as std_mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use gazegpt_core::foveation::{encode_png, multiscale_crop, CropLevelMeta};
use gazegpt_core::pipeline::{
    CallLog, ConfigError, EventSink, GazeSource, Pipeline, PipelineConfig, QueryError, QueryRequest, QueryTranscript,
    Question, StageEvent, TranscriptLog,
};
use gazegpt_core::{CaptureError, FixationDepth, PixelPoint, Session};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("session {id:?}: {source}")]
    Session { id: String, source: CaptureError },
    #[error("no sessions configured")]
    NoSessions,
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("transcript log {path}: {source}")]
    Log { path: PathBuf, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

struct Job {
    request: QueryRequest,
    cancel: Arc<AtomicBool>,
    reply: oneshot::Sender<Result<QueryTranscript, QueryError>>,
}

struct SessionHandle {
    session: Arc<Session>,
    /// Sender plus the next sequence number; held together so sequence
    /// order equals queue order.
    queue: Mutex<(std_mpsc::Sender<Job>, u64)>,
    transcripts: Arc<RwLock<Vec<QueryTranscript>>>,
}

#[derive(Clone)]
struct BroadcastSink(broadcast::Sender<StageEvent>);

impl EventSink for BroadcastSink {
    fn emit(&self, event: StageEvent) {
        // No subscribers is fine.
        let _ = self.0.send(event);
    }
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    sessions: Arc<BTreeMap<String, SessionHandle>>,
    default_session: String,
    pipeline: Arc<Pipeline>,
    depth: FixationDepth,
    events: broadcast::Sender<StageEvent>,
}

impl AppState {
    /// Starts one worker per session. The first session is the default for
    /// requests that do not name one.
    pub fn new(
        pipeline: Pipeline,
        depth: FixationDepth,
        sessions: Vec<(String, Session)>,
        log: Option<TranscriptLog>,
    ) -> Result<Self, ServerError> {
        let default_session = sessions.first().ok_or(ServerError::NoSessions)?.0.clone();
        let pipeline = Arc::new(pipeline);
        let (events, _) = broadcast::channel(1024);
        let log = log.map(Arc::new);
        let mut map = BTreeMap::new();
        for (id, session) in sessions {
            let session = Arc::new(session);
            let transcripts = Arc::new(RwLock::new(Vec::new()));
            let (tx, rx) = std_mpsc::channel::<Job>();
            let (p, s, t, l, sink) =
                (pipeline.clone(), session.clone(), transcripts.clone(), log.clone(), BroadcastSink(events.clone()));
            thread::Builder::new()
                .name(format!("session-{id}"))
                .spawn(move || worker(rx, &p, &s, &t, l.as_deref(), &sink))?;
            map.insert(id, SessionHandle { session, queue: Mutex::new((tx, 0)), transcripts });
        }
        Ok(Self { sessions: Arc::new(map), default_session, pipeline, depth, events })
    }

    /// Loads the configured sessions and builds clients.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, ServerError> {
        let clients = cfg.clients(CallLog::new())?;
        let mut sessions = Vec::new();
        for s in &cfg.sessions {
            let session = Session::load(&s.path).map_err(|source| ServerError::Session { id: s.id.clone(), source })?;
            sessions.push((s.id.clone(), session));
        }
        let log = match &cfg.transcript_log {
            Some(path) => {
                Some(TranscriptLog::open(path).map_err(|source| ServerError::Log { path: path.clone(), source })?)
            }
            None => None,
        };
        Self::new(cfg.pipeline(clients), cfg.fixation_depth(), sessions, log)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StageEvent> {
        self.events.subscribe()
    }
}

fn worker(
    rx: std_mpsc::Receiver<Job>,
    pipeline: &Pipeline,
    session: &Session,
    transcripts: &RwLock<Vec<QueryTranscript>>,
    log: Option<&TranscriptLog>,
    sink: &BroadcastSink,
) {
    for job in rx {
        if job.cancel.load(Ordering::SeqCst) {
            let _ = job.reply.send(Err(QueryError::Cancelled));
            continue;
        }
        let result = pipeline.run(session, &job.request, sink, Some(&job.cancel)).map(|(t, _)| t);
        if let Ok(t) = &result {
            transcripts.write().expect("transcript store poisoned").push(t.clone());
            if let Some(log) = log {
                if let Err(e) = log.append(t) {
                    eprintln!("warning: could not append transcript: {e}");
                }
            }
        }
        let _ = job.reply.send(result);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/query", post(post_query))
        .route("/sessions", get(list_sessions))
        .route("/session/{id}/transcripts", get(get_transcripts))
        .route("/crops", get(get_crops))
        .route("/frames/{id}", get(get_frame))
        .route("/events", get(events_ws))
        .with_state(state)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(cfg: &PipelineConfig) -> Result<(), ServerError> {
    let state = AppState::from_config(cfg)?;
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|source| ServerError::Bind { addr: cfg.bind.clone(), source })?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Binds to `addr` (port 0 for any) and serves in the background.
pub async fn spawn(state: AppState, addr: &str) -> Result<SocketAddr, ServerError> {
    let listener =
        tokio::net::TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr: addr.into(), source })?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, router(state)).await;
    });
    Ok(local)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let status = match &e {
            QueryError::Capture(CaptureError::OutOfRange { .. } | CaptureError::UnknownFrame(_)) => {
                StatusCode::BAD_REQUEST
            }
            QueryError::Geometry(_) | QueryError::Foveation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            QueryError::Cancelled => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl AppState {
    fn session(&self, id: Option<&str>) -> Result<(&str, &SessionHandle), ApiError> {
        let id = id.unwrap_or(&self.default_session);
        self.sessions
            .get_key_value(id)
            .map(|(k, v)| (k.as_str(), v))
            .ok_or_else(|| not_found(format!("unknown session {id:?}")))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBody {
    pub session_id: Option<String>,
    pub frame_id: Option<usize>,
    pub timestamp: Option<f64>,
    pub gaze_px: Option<PixelPoint>,
    pub use_projected_gaze: Option<bool>,
    pub question: Option<String>,
    /// Base64 WAV.
    pub audio: Option<String>,
}

/// Flags the job as cancelled if the HTTP request goes away before the
/// worker picks it up or between stages.
struct CancelOnDrop(Arc<AtomicBool>);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.0.store(true, Ordering::SeqCst);
    }
}

async fn post_query(
    State(state): State<AppState>,
    Json(body): Json<QueryBody>,
) -> Result<Json<QueryTranscript>, ApiError> {
    let (id, handle) = state.session(body.session_id.as_deref())?;
    let trigger_t = match (body.frame_id, body.timestamp) {
        (Some(f), None) => {
            handle.session.frames().get(f).map(|e| e.t).ok_or_else(|| not_found(format!("unknown frame {f}")))?
        }
        (None, Some(t)) => t,
        _ => return Err(bad_request("give exactly one of frame_id or timestamp")),
    };
    let gaze = match (body.gaze_px, body.use_projected_gaze.unwrap_or(false)) {
        (Some(p), false) => GazeSource::Pixel(p),
        (None, true) => GazeSource::Projected(state.depth),
        (None, false) => GazeSource::Projected(state.depth),
        (Some(_), true) => return Err(bad_request("give gaze_px or use_projected_gaze, not both")),
    };
    let question = match (body.question, body.audio) {
        (Some(q), None) => Question::Text(q),
        (None, Some(a)) => Question::Audio(
            base64::engine::general_purpose::STANDARD
                .decode(a.trim())
                .map_err(|e| bad_request(format!("audio is not base64: {e}")))?,
        ),
        _ => return Err(bad_request("give exactly one of question or audio")),
    };

    let cancel = Arc::new(AtomicBool::new(false));
    let _guard = CancelOnDrop(cancel.clone());
    let (reply, rx) = oneshot::channel();
    {
        let mut q = handle.queue.lock().expect("queue poisoned");
        let seq = q.1;
        let request = QueryRequest { session_id: id.to_string(), seq, trigger_t, question, gaze };
        q.0.send(Job { request, cancel, reply })
            .map_err(|_| ApiError(StatusCode::SERVICE_UNAVAILABLE, "session worker stopped".into()))?;
        q.1 += 1;
    }
    let result = rx.await.map_err(|_| ApiError(StatusCode::SERVICE_UNAVAILABLE, "session worker stopped".into()))?;
    Ok(Json(result?))
}

async fn get_transcripts(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<QueryTranscript>>, ApiError> {
    let (_, handle) = state.session(Some(&id))?;
    let list = handle.transcripts.read().expect("transcript store poisoned").clone();
    Ok(Json(list))
}

#[derive(Debug, Serialize)]
struct SessionInfo {
    id: String,
    width: u32,
    height: u32,
    frame_times: Vec<f64>,
    span: (f64, f64),
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionInfo>> {
    Json(
        state
            .sessions
            .iter()
            .map(|(id, h)| SessionInfo {
                id: id.clone(),
                width: h.session.camera.width_px(),
                height: h.session.camera.height_px(),
                frame_times: h.session.frames().iter().map(|f| f.t).collect(),
                span: h.session.span(),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct CropParams {
    frame_id: usize,
    u: f64,
    v: f64,
    session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropLevelBody {
    pub meta: CropLevelMeta,
    pub png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropsBody {
    pub frame_id: usize,
    pub center: PixelPoint,
    pub levels: Vec<CropLevelBody>,
}

async fn get_crops(State(state): State<AppState>, Query(p): Query<CropParams>) -> Result<Json<CropsBody>, ApiError> {
    let (_, handle) = state.session(p.session_id.as_deref())?;
    let session = handle.session.clone();
    let spec = state.pipeline.spec;
    let center = PixelPoint::new(p.u, p.v);
    let frame_id = p.frame_id;
    let crops = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let frame = session.frame(frame_id).map_err(|e| not_found(e.to_string()))?;
        multiscale_crop(&frame.pixels, &center, &session.camera, &spec)
            .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(CropsBody {
        frame_id,
        center,
        levels: crops.levels.iter().map(|l| CropLevelBody { meta: l.meta, png_b64: l.base64_png() }).collect(),
    }))
}

#[derive(Debug, Deserialize)]
struct FrameParams {
    session_id: Option<String>,
}

async fn get_frame(
    State(state): State<AppState>,
    Path(id): Path<usize>,
    Query(p): Query<FrameParams>,
) -> Result<Response, ApiError> {
    let (_, handle) = state.session(p.session_id.as_deref())?;
    let session = handle.session.clone();
    let png = tokio::task::spawn_blocking(move || session.frame(id).map(|f| encode_png(&f.pixels)))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| not_found(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn events_ws(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    let rx = state.subscribe();
    ws.on_upgrade(move |socket| forward_events(socket, rx))
}

async fn forward_events(mut socket: WebSocket, mut rx: broadcast::Receiver<StageEvent>) {
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(ev) => {
                    let text = serde_json::to_string(&ev).expect("event serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let note = json!({ "event": "lagged", "missed": n }).to_string();
                    if socket.send(Message::Text(note.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
