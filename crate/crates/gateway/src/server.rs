use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sre_core::lifecycle::{LifecycleError, RuleRecord};
use sre_core::semantic::load_ontology;
use sre_core::{Clock, Engine, EngineEvent, EngineOptions, Scalar, WallClock};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};
use tower_http::services::{ServeDir, ServeFile};

use crate::config::{ClockMode, ConfigError, GatewayConfig};
use crate::problem::ApiError;

/// Milliseconds since the gateway started.
struct SinceStart(Instant);

impl Clock for SinceStart {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load {what} {path}: {message}")]
    Load {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("cannot open state directory {path}: {message}")]
    State { path: PathBuf, message: String },
    #[error("restore failed: {0}")]
    Restore(LifecycleError),
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
}

fn read(what: &'static str, path: &Path) -> Result<String, StartError> {
    std::fs::read_to_string(path).map_err(|e| StartError::Load {
        what,
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Builds the engine described by `cfg`, loads its devices, restores
/// persisted rules and starts the scheduler thread.
pub fn build_engine(cfg: &GatewayConfig) -> Result<Engine, StartError> {
    let keys = cfg.validate()?;
    let load_err = |what, path: &Path, e: &dyn std::fmt::Display| StartError::Load {
        what,
        path: path.to_owned(),
        message: e.to_string(),
    };
    let ontology =
        load_ontology(&read("ontology file", &cfg.ontology)?).map_err(|e| load_err("ontology file", &cfg.ontology, &e))?;
    let commissioning = read("commissioning file", &cfg.commissioning)?;
    let mut opts = EngineOptions::new(&cfg.state_dir, keys);
    opts.notification_file = cfg.notification_sink.clone();
    let clock: Arc<dyn Clock> = match cfg.clock {
        ClockMode::Wall => Arc::new(WallClock),
        ClockMode::Virtual => Arc::new(SinceStart(Instant::now())),
    };
    let engine = Engine::with_clock(clock, ontology, opts).map_err(|e| StartError::State {
        path: cfg.state_dir.clone(),
        message: e.to_string(),
    })?;
    engine
        .registry()
        .load_commissioning(&commissioning)
        .map_err(|e| load_err("commissioning file", &cfg.commissioning, &e))?;
    engine.spawn_scheduler().map_err(|e| StartError::State {
        path: cfg.state_dir.clone(),
        message: e.to_string(),
    })?;
    let restored = engine.restore().map_err(StartError::Restore)?;
    tracing::info!(restored, things = engine.registry().len(), "engine ready");
    Ok(engine)
}

/// One serialized engine event, shared by every stream subscriber.
struct Outgoing {
    /// Thing id for device events.
    device: Option<String>,
    json: String,
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    events: broadcast::Sender<Arc<Outgoing>>,
    heartbeat: Duration,
    installation: bool,
}

/// The HTTP application for an engine.
pub fn router(engine: Arc<Engine>, cfg: &GatewayConfig) -> Router {
    let (tx, _) = broadcast::channel(4096);
    {
        let tx = tx.clone();
        engine.observe(move |ev| {
            if tx.receiver_count() == 0 {
                return;
            }
            let device = match ev {
                EngineEvent::Device(d) => Some(d.thing_id.clone()),
                _ => None,
            };
            if let Ok(json) = serde_json::to_string(ev) {
                let _ = tx.send(Arc::new(Outgoing { device, json }));
            }
        });
    }
    let state = AppState {
        engine,
        events: tx,
        heartbeat: Duration::from_millis(cfg.heartbeat_ms.max(1)),
        installation: cfg.rule_installation,
    };
    let mut app = Router::new()
        .route("/rules", get(list_rules).post(install_rule))
        .route("/rules/{name}", get(get_rule).delete(uninstall_rule))
        .route("/rules/{name}/start", post(start_rule))
        .route("/rules/{name}/stop", post(stop_rule))
        .route("/rules/{name}/params/{key}", put(set_param))
        .route("/query", post(query))
        .route("/things", get(list_things))
        .route("/things/{id}", get(get_thing))
        .route("/events", get(event_stream))
        .layer(DefaultBodyLimit::max(8 << 20))
        .fallback(not_found)
        .with_state(state);
    if let Some(ui) = &cfg.ui_dir {
        let dir = ServeDir::new(ui).fallback(ServeFile::new(ui.join("index.html")));
        app = app
            .nest_service("/ui", dir)
            .route("/", get(|| async { Redirect::temporary("/ui/") }));
    }
    app
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

/// Runs a blocking engine call off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InstallView {
    #[serde(flatten)]
    pub record: RuleRecord,
    /// True when the package replaced an installed rule.
    pub updated: bool,
}

async fn list_rules(State(s): State<AppState>) -> Json<Vec<RuleRecord>> {
    Json(s.engine.rules())
}

async fn get_rule(State(s): State<AppState>, UrlPath(name): UrlPath<String>) -> Result<Json<RuleRecord>, ApiError> {
    s.engine.rule(&name).map(Json).ok_or_else(|| ApiError::not_found("rule", &name))
}

async fn install_rule(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    if !s.installation {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "InstallDisabled", "rule installation is disabled"));
    }
    let engine = s.engine.clone();
    let (record, updated) = blocking(move || engine.install(&body)).await??;
    Ok((StatusCode::CREATED, Json(InstallView { record, updated })).into_response())
}

async fn start_rule(State(s): State<AppState>, UrlPath(name): UrlPath<String>) -> Result<Json<RuleRecord>, ApiError> {
    let engine = s.engine.clone();
    Ok(Json(blocking(move || engine.start(&name)).await??))
}

async fn stop_rule(State(s): State<AppState>, UrlPath(name): UrlPath<String>) -> Result<Json<RuleRecord>, ApiError> {
    let engine = s.engine.clone();
    Ok(Json(blocking(move || engine.stop(&name)).await??))
}

async fn uninstall_rule(State(s): State<AppState>, UrlPath(name): UrlPath<String>) -> Result<StatusCode, ApiError> {
    let engine = s.engine.clone();
    blocking(move || engine.uninstall(&name)).await??;
    Ok(StatusCode::NO_CONTENT)
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
}

async fn set_param(
    State(s): State<AppState>,
    UrlPath((name, key)): UrlPath<(String, String)>,
    body: Bytes,
) -> Result<Json<RuleRecord>, ApiError> {
    let value: Value = serde_json::from_slice(&body).map_err(|e| bad_request(format!("body is not JSON: {e}")))?;
    let value: Scalar = match value {
        Value::Bool(_) | Value::Number(_) | Value::String(_) => serde_json::from_value(value).expect("scalar JSON"),
        other => return Err(bad_request(format!("parameter value must be a bool, number or string, not {other}"))),
    };
    let engine = s.engine.clone();
    Ok(Json(blocking(move || engine.set_param(&name, &key, value)).await??))
}

#[derive(Deserialize)]
struct QueryBody {
    q: String,
}

async fn query(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let body: QueryBody =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("expected {{\"q\": text}}: {e}")))?;
    let engine = s.engine.clone();
    let result = blocking(move || engine.query(&body.q)).await??;
    Ok(Json(serde_json::to_value(result).expect("result serializes")))
}

async fn list_things(State(s): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(s.engine.registry().snapshot()).expect("things serialize"))
}

async fn get_thing(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let thing = s.engine.registry().get_thing(&id).ok_or_else(|| ApiError::not_found("thing", &id))?;
    Ok(Json(serde_json::to_value(thing).expect("thing serializes")))
}

#[derive(Debug, Default, Deserialize)]
struct EventFilter {
    /// Include device events. Defaults to true.
    devices: Option<bool>,
    /// Only device events of this thing.
    thing: Option<String>,
}

impl EventFilter {
    fn admits(&self, o: &Outgoing) -> bool {
        match &o.device {
            None => true,
            Some(id) => self.devices.unwrap_or(true) && self.thing.as_ref().is_none_or(|t| t == id),
        }
    }
}

async fn event_stream(
    State(s): State<AppState>,
    Query(filter): Query<EventFilter>,
) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let rx = s.events.subscribe();
    let stream = futures::stream::unfold((rx, filter), |(mut rx, filter)| async move {
        loop {
            match rx.recv().await {
                Ok(o) if filter.admits(&o) => {
                    return Some((Ok(SseEvent::default().data(o.json.as_str())), (rx, filter)));
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(missed)) => {
                    let data = format!("{{\"type\":\"lagged\",\"missed\":{missed}}}");
                    return Some((Ok(SseEvent::default().data(data)), (rx, filter)));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::new().interval(s.heartbeat).text("heartbeat"))
}

/// A gateway serving HTTP on a background thread.
pub struct Gateway {
    addr: SocketAddr,
    engine: Arc<Engine>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Gateway {
    /// Builds the engine and starts listening. The listener is bound before
    /// this returns, so requests may be sent right away.
    pub fn start(cfg: &GatewayConfig) -> Result<Self, StartError> {
        let engine = Arc::new(build_engine(cfg)?);
        let listener = std::net::TcpListener::bind(cfg.listen).map_err(|e| StartError::Bind {
            addr: cfg.listen,
            message: e.to_string(),
        })?;
        let bind_err = |e: std::io::Error| StartError::Bind { addr: cfg.listen, message: e.to_string() };
        let addr = listener.local_addr().map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let app = router(engine.clone(), cfg);
        let (stop, stopped) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .thread_name("gw-http")
            .build()
            .map_err(bind_err)?;
        let thread = std::thread::Builder::new()
            .name("gw-serve".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers");
                    let served = axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = stopped.await;
                        })
                        .await;
                    if let Err(e) = served {
                        tracing::error!(error = %e, "http server failed");
                    }
                });
                // open event streams never finish on their own
                runtime.shutdown_timeout(Duration::from_millis(200));
            })
            .map_err(bind_err)?;
        tracing::info!(%addr, "listening");
        Ok(Self {
            addr,
            engine,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    /// Blocks until SIGINT or SIGTERM, then stops.
    pub fn run_until_signal(self) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().expect("signal runtime");
        rt.block_on(async {
            #[cfg(unix)]
            {
                use tokio::signal::unix::{signal, SignalKind};
                let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            #[cfg(not(unix))]
            let _ = tokio::signal::ctrl_c().await;
        });
        tracing::info!("shutting down");
        self.stop();
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.engine.shutdown();
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown();
    }
}
