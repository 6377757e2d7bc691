//! HTTP front end: sessions run as background tasks and stream their
//! transitions to observers over server-sent events.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Notify};

use crate::session::{InterventionRecord, ReplayEntry, SessionConfig, SessionCore, SessionError, SessionEvent};

/// Transitions taken between yields when nobody is watching.
const BATCH: usize = 64;
const CHANNEL: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    NotFound(u64),
    #[error("{0}")]
    Conflict(&'static str),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::Session(SessionError::NotRunning(_)) => StatusCode::CONFLICT,
            ServiceError::Session(_) => StatusCode::BAD_REQUEST,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

/// What goes over a session's broadcast channel.
#[derive(Debug, Clone, Copy)]
enum Message {
    Event(SessionEvent),
    Finished,
}

#[derive(Debug)]
struct Control {
    paused: bool,
    speed: f64,
}

#[derive(Debug)]
struct Session {
    core: Mutex<SessionCore>,
    control: Mutex<Control>,
    wake: Notify,
    tx: broadcast::Sender<Message>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Session {
    fn observers(&self) -> usize {
        self.tx.receiver_count()
    }

    fn send(&self, ev: SessionEvent) {
        // No receivers is not an error here.
        let _ = self.tx.send(Message::Event(ev));
    }

    /// Steps once under the core lock so triggers land between transitions.
    /// Returns `false` once training is over.
    fn step(&self) -> Result<bool, SessionError> {
        let mut core = lock(&self.core);
        match core.step()? {
            Some(ev) => {
                self.send(ev);
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

async fn run(session: Arc<Session>) {
    loop {
        let (paused, speed) = {
            let c = lock(&session.control);
            (c.paused, c.speed)
        };
        if paused {
            session.wake.notified().await;
            continue;
        }
        let watched = session.observers() > 0;
        let n = if watched { 1 } else { BATCH };
        let mut more = true;
        for _ in 0..n {
            match session.step() {
                Ok(true) => {}
                Ok(false) | Err(_) => {
                    more = false;
                    break;
                }
            }
        }
        if !more {
            let _ = session.tx.send(Message::Finished);
            return;
        }
        if watched {
            tokio::select! {
                _ = tokio::time::sleep(Duration::from_secs_f64(1.0 / speed)) => {}
                _ = session.wake.notified() => {}
            }
        } else {
            tokio::task::yield_now().await;
        }
    }
}

#[derive(Debug, Default)]
pub struct AppState {
    sessions: Mutex<HashMap<u64, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    fn get(&self, id: u64) -> Result<Arc<Session>, ServiceError> {
        lock(&self.sessions).get(&id).cloned().ok_or(ServiceError::NotFound(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: u64,
    pub config: SessionConfig,
    /// Completed episodes.
    pub episode: usize,
    pub t: usize,
    pub state: Option<usize>,
    pub finished: bool,
    pub paused: bool,
    pub speed: f64,
    pub observers: usize,
    pub removed: Vec<usize>,
    pub interventions: Vec<InterventionRecord>,
    /// Stamps that reproduce this run with `SessionCore::replay`.
    pub replay: Vec<ReplayEntry>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstopRequest {
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedRequest {
    pub steps_per_second: f64,
}

type Shared = Arc<AppState>;

async fn create(State(app): State<Shared>, Json(cfg): Json<SessionConfig>) -> Result<impl IntoResponse, ServiceError> {
    let core = SessionCore::new(cfg.clone())?;
    let (tx, _) = broadcast::channel(CHANNEL);
    let session = Arc::new(Session {
        core: Mutex::new(core),
        control: Mutex::new(Control {
            paused: cfg.start_paused,
            speed: cfg.speed,
        }),
        wake: Notify::new(),
        tx,
    });
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    lock(&app.sessions).insert(id, session.clone());
    tokio::spawn(run(session));
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn status(State(app): State<Shared>, Path(id): Path<u64>) -> Result<Json<SessionStatus>, ServiceError> {
    let s = app.get(id)?;
    let (paused, speed) = {
        let c = lock(&s.control);
        (c.paused, c.speed)
    };
    let core = lock(&s.core);
    Ok(Json(SessionStatus {
        id,
        config: core.config().clone(),
        episode: core.episode(),
        t: core.t(),
        state: core.current_state(),
        finished: core.finished(),
        paused,
        speed,
        observers: s.observers(),
        removed: core.removed().iter().copied().collect(),
        interventions: core.interventions().to_vec(),
        replay: core.interventions().iter().map(ReplayEntry::from).collect(),
    }))
}

async fn estop(
    State(app): State<Shared>,
    Path(id): Path<u64>,
    body: Option<Json<EstopRequest>>,
) -> Result<Json<InterventionRecord>, ServiceError> {
    let s = app.get(id)?;
    if lock(&s.control).paused {
        return Err(ServiceError::Conflict("session is paused"));
    }
    if s.observers() == 0 {
        return Err(ServiceError::Conflict("no observer is attached"));
    }
    let mut core = lock(&s.core);
    if core.finished() {
        return Err(ServiceError::Conflict("session has ended"));
    }
    let window = body.and_then(|Json(b)| b.window).unwrap_or(core.config().window);
    let record = core.trigger(window)?;
    for &state in &record.marked {
        s.send(SessionEvent {
            episode: record.episode,
            t: record.t,
            s: state,
            a: None,
            r: 0.0,
            removed_flag: true,
        });
    }
    Ok(Json(record))
}

fn set_paused(app: &AppState, id: u64, paused: bool) -> Result<StatusCode, ServiceError> {
    let s = app.get(id)?;
    lock(&s.control).paused = paused;
    s.wake.notify_one();
    Ok(StatusCode::NO_CONTENT)
}

async fn pause(State(app): State<Shared>, Path(id): Path<u64>) -> Result<StatusCode, ServiceError> {
    set_paused(&app, id, true)
}

async fn resume(State(app): State<Shared>, Path(id): Path<u64>) -> Result<StatusCode, ServiceError> {
    set_paused(&app, id, false)
}

async fn speed(
    State(app): State<Shared>,
    Path(id): Path<u64>,
    Json(req): Json<SpeedRequest>,
) -> Result<StatusCode, ServiceError> {
    if !(req.steps_per_second > 0.0 && req.steps_per_second.is_finite()) {
        return Err(SessionError::Config("steps_per_second must be positive".into()).into());
    }
    let s = app.get(id)?;
    lock(&s.control).speed = req.steps_per_second;
    s.wake.notify_one();
    Ok(StatusCode::NO_CONTENT)
}

async fn support(State(app): State<Shared>, Path(id): Path<u64>) -> Result<Response, ServiceError> {
    let s = app.get(id)?;
    let doc = lock(&s.core).support_document();
    Ok(Json(doc).into_response())
}

async fn curve(State(app): State<Shared>, Path(id): Path<u64>) -> Result<Response, ServiceError> {
    let s = app.get(id)?;
    let mut buf = Vec::new();
    lock(&s.core)
        .curve()
        .write_csv(&mut buf, true)
        .expect("writing to memory cannot fail");
    Ok(([(header::CONTENT_TYPE, "text/csv")], buf).into_response())
}

/// `step` events carry transitions, `removed` events carry marked states and
/// a final `finished` event closes the stream.
async fn events(
    State(app): State<Shared>,
    Path(id): Path<u64>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let s = app.get(id)?;
    let rx = s.tx.subscribe();
    let done = lock(&s.core).finished();
    // Wake a paced sleeper so it notices the new observer.
    s.wake.notify_one();
    let stream = stream::unfold((rx, done), |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(Message::Event(ev)) => {
                    let name = if ev.removed_flag { "removed" } else { "step" };
                    let event = Event::default().event(name).json_data(ev).expect("events serialise");
                    return Some((Ok(event), (rx, false)));
                }
                Ok(Message::Finished) => {
                    return Some((Ok(Event::default().event("finished").data("{}")), (rx, true)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// All routes over a fresh, empty session table.
pub fn router() -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/estop", post(estop))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/speed", post(speed))
        .route("/sessions/{id}/support", get(support))
        .route("/sessions/{id}/curve", get(curve))
        .route("/sessions/{id}/events", get(events))
        .with_state(Arc::new(AppState::default()))
}

pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router()).await
}
