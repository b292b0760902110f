//! Console backend. One orchestrator thread owns the engine and its tick
//! loop; HTTP handlers talk to it only through a command queue and receive
//! snapshots and events over a broadcast channel.

use std::path::PathBuf;
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use fieldnav::runtime::api::{self, ApiError, Request, Response, StreamMessage};
use fieldnav::runtime::replay::write_drive;
use fieldnav::runtime::{CampaignReport, Engine, EngineError};
use fieldnav::sim::DT;
use log::{info, warn};
use serde::de::DeserializeOwned;
use tokio::sync::{broadcast, oneshot};

type Reply = oneshot::Sender<Result<Response, ApiError>>;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("orchestrator thread panicked")]
    Panicked,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    pub snapshot_hz: f64,
    /// Teach drive traces are written here when set.
    pub out: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            speed: 1.0,
            snapshot_hz: 10.0,
            out: None,
        }
    }
}

enum Job {
    Call(Request, Reply),
    Stop,
}

/// Running orchestrator.
pub struct Orchestrator {
    jobs: mpsc::Sender<Job>,
    stream: broadcast::Sender<StreamMessage>,
    thread: Option<JoinHandle<Result<CampaignReport, EngineError>>>,
}

#[derive(Clone)]
pub struct AppState {
    jobs: mpsc::Sender<Job>,
    stream: broadcast::Sender<StreamMessage>,
}

fn mutates(r: &Request) -> bool {
    !matches!(r, Request::Status | Request::Map | Request::Preview(_))
}

fn run_loop(mut engine: Engine, opts: ServeOptions, jobs: mpsc::Receiver<Job>, stream: broadcast::Sender<StreamMessage>) -> Result<CampaignReport, EngineError> {
    engine.enable_outbox();
    let period = Duration::from_secs_f64(DT / opts.speed.max(1e-3));
    let snap_every = Duration::from_secs_f64(1.0 / opts.snapshot_hz.max(0.1));
    let mut next_tick = Instant::now() + period;
    let mut last_snap = Instant::now();
    let publish = |engine: &mut Engine| {
        for e in engine.drain_outbox() {
            let _ = stream.send(StreamMessage::Event(e));
        }
        let _ = stream.send(StreamMessage::Snapshot(Box::new(engine.snapshot())));
    };
    loop {
        let wait = next_tick.saturating_duration_since(Instant::now());
        match jobs.recv_timeout(wait) {
            Ok(Job::Call(req, reply)) => {
                let changes = mutates(&req);
                let ends_teach = matches!(req, Request::TeachStop(_) | Request::Release(_));
                let result = api::apply(&mut engine, req);
                if ends_teach && result.is_ok() {
                    save_trace(&engine, opts.out.as_ref());
                }
                let _ = reply.send(result);
                if changes {
                    publish(&mut engine);
                    last_snap = Instant::now();
                }
            }
            Ok(Job::Stop) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                if let Err(e) = engine.tick() {
                    warn!("tick failed: {e}");
                }
                for e in engine.drain_outbox() {
                    let _ = stream.send(StreamMessage::Event(e));
                }
                if last_snap.elapsed() >= snap_every {
                    let _ = stream.send(StreamMessage::Snapshot(Box::new(engine.snapshot())));
                    last_snap = Instant::now();
                }
                next_tick += period;
                let now = Instant::now();
                if next_tick < now {
                    next_tick = now;
                }
            }
        }
    }
    engine.finish()
}

fn save_trace(engine: &Engine, out: Option<&PathBuf>) {
    let (Some(dir), trace) = (out, engine.last_teach_trace()) else { return };
    if trace.is_empty() {
        return;
    }
    let name = format!("teach_{:.1}.ndjson", engine.t());
    if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join(&name), write_drive(trace))) {
        warn!("could not save drive trace {name}: {e}");
    }
}

impl Orchestrator {
    pub fn spawn(engine: Engine, opts: ServeOptions) -> Self {
        let (jobs, rx) = mpsc::channel();
        let (stream, _) = broadcast::channel(1024);
        let tx = stream.clone();
        let thread = std::thread::Builder::new()
            .name("orchestrator".into())
            .spawn(move || run_loop(engine, opts, rx, tx))
            .expect("spawn orchestrator thread");
        Self {
            jobs,
            stream,
            thread: Some(thread),
        }
    }

    pub fn state(&self) -> AppState {
        AppState {
            jobs: self.jobs.clone(),
            stream: self.stream.clone(),
        }
    }

    /// Stop ticking and flush telemetry.
    pub fn shutdown(mut self) -> Result<CampaignReport, ServeError> {
        let _ = self.jobs.send(Job::Stop);
        let t = self.thread.take().expect("joined once");
        Ok(t.join().map_err(|_| ServeError::Panicked)??)
    }
}

impl AppState {
    pub async fn call(&self, req: Request) -> Result<Response, ApiError> {
        let (tx, rx) = oneshot::channel();
        let gone = || ApiError {
            status: 503,
            code: "stopped".into(),
            message: "orchestrator is not running".into(),
            holder: None,
        };
        self.jobs.send(Job::Call(req, tx)).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }
}

fn reply(r: Result<Response, ApiError>) -> HttpResponse {
    match r {
        Ok(body) => Json(body).into_response(),
        Err(e) => {
            let code = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (code, Json(e)).into_response()
        }
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text = if body.is_empty() { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(text).map_err(|e| ApiError {
        status: 400,
        code: "bad_request".into(),
        message: e.to_string(),
        holder: None,
    })
}

async fn with_body<T: DeserializeOwned>(state: &AppState, body: Bytes, wrap: fn(T) -> Request) -> HttpResponse {
    match parse::<T>(&body) {
        Ok(b) => reply(state.call(wrap(b)).await),
        Err(e) => reply(Err(e)),
    }
}

async fn stream_socket(mut socket: WebSocket, state: AppState) {
    let mut rx = state.stream.subscribe();
    if let Ok(Response::Snapshot(s)) = state.call(Request::Status).await {
        let first = serde_json::to_string(&StreamMessage::Snapshot(s)).expect("snapshot serialises");
        if socket.send(Message::Text(first.into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(m) => {
                    let text = serde_json::to_string(&m).expect("stream message serialises");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => warn!("stream client lagged {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/status", get(|State(s): State<AppState>| async move { reply(s.call(Request::Status).await) }))
        .route("/api/map", get(|State(s): State<AppState>| async move { reply(s.call(Request::Map).await) }))
        .route("/api/drive/acquire", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::Acquire).await }))
        .route("/api/drive/release", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::Release).await }))
        .route("/api/teleop", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::Teleop).await }))
        .route("/api/teach/start", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::TeachStart).await }))
        .route("/api/teach/stop", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::TeachStop).await }))
        .route("/api/mission/preview", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::Preview).await }))
        .route("/api/mission/dispatch", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::Dispatch).await }))
        .route("/api/mission/abort", post(|State(s): State<AppState>| async move { reply(s.call(Request::Abort).await) }))
        .route("/api/localise", post(|State(s): State<AppState>, b: Bytes| async move { with_body(&s, b, Request::Localise).await }))
        .route("/api/dock", post(|State(s): State<AppState>| async move { reply(s.call(Request::Dock).await) }))
        .route(
            "/api/stream",
            get(|State(s): State<AppState>, ws: WebSocketUpgrade| async move { ws.on_upgrade(move |sock| stream_socket(sock, s)) }),
        )
        .with_state(state)
}

/// Serve until `shutdown` resolves, then stop the orchestrator.
pub async fn serve(
    listener: tokio::net::TcpListener,
    orchestrator: Orchestrator,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<CampaignReport, ServeError> {
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(orchestrator.state())).with_graceful_shutdown(shutdown).await?;
    tokio::task::spawn_blocking(move || orchestrator.shutdown()).await.map_err(|_| ServeError::Panicked)?
}
