//! HTTP service: session reads, feedback and queued optimization jobs.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use promptloom_core::config::{ConfigError, OptimizerBackend, SearchStrategy};
use promptloom_core::providers::ProviderError;
use promptloom_core::session::{self, FeedbackDraft, SessionError, SessionStore};
use promptloom_core::{Engine, Error, RunOptions};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::errors::{AppError, ErrorBody};
use crate::provider::{ModelOverrides, ProviderSettings};
use crate::view::{dataset_document, session_document, OptimizeResponse};

/// Jobs waiting behind the running one.
pub const QUEUE_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    pub raw_input: String,
    #[serde(default)]
    pub strategy: Option<SearchStrategy>,
    #[serde(default)]
    pub backend: Option<OptimizerBackend>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub models: Option<ModelOverrides>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl OptimizeRequest {
    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            strategy: self.strategy.unwrap_or(SearchStrategy::QuickSearch),
            backend: self.backend,
            lambda: self.lambda,
            seed: self.seed.unwrap_or(0),
            n_samples: None,
            n_trials: None,
        }
    }

    fn validate(&self) -> Result<RunOptions, AppError> {
        if self.raw_input.trim().is_empty() {
            return Err(AppError::InvalidRequest("raw_input must not be empty".into()));
        }
        let opts = self.run_options();
        opts.optimizer_config().validate().map_err(Error::from)?;
        opts.objective().validate().map_err(|e| Error::from(ConfigError::Invalid(e)))?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Error,
}

#[derive(Debug, Clone)]
enum JobKind {
    Optimize { raw: String, opts: RunOptions, models: ModelOverrides },
    Reoptimize,
}

#[derive(Debug)]
struct Job {
    session_id: String,
    kind: JobKind,
}

#[derive(Debug, Clone)]
struct JobState {
    status: JobStatus,
    error: Option<ErrorBody>,
}

/// Body of `GET /v1/sessions/{id}/status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusBody {
    pub session_id: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<OptimizeResponse>,
}

/// Builds the engine for one job from the request's model overrides.
pub type EngineFactory = Arc<dyn Fn(&ModelOverrides) -> Result<Engine, ProviderError> + Send + Sync>;

pub fn settings_factory(settings: ProviderSettings) -> EngineFactory {
    Arc::new(move |models| settings.with_overrides(models).build_engine())
}

/// Shared service state. Everything durable lives in the store; the job
/// table only tracks work started by this process.
pub struct AppState {
    store: SessionStore,
    engines: EngineFactory,
    jobs: Mutex<HashMap<String, JobState>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    queue: mpsc::Sender<Job>,
}

impl AppState {
    /// Builds the state and spawns the job worker on the current runtime.
    pub fn start(store: SessionStore, engines: EngineFactory) -> Arc<Self> {
        let (tx, rx) = mpsc::channel(QUEUE_DEPTH);
        let state = Arc::new(Self {
            store,
            engines,
            jobs: Mutex::default(),
            locks: Mutex::default(),
            queue: tx,
        });
        tokio::spawn(worker(Arc::downgrade(&state), rx));
        state
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    fn job(&self, id: &str) -> Option<JobState> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    fn set_job(&self, id: &str, status: JobStatus, error: Option<ErrorBody>) {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).insert(id.to_string(), JobState { status, error });
    }

    fn in_flight(&self, id: &str) -> bool {
        matches!(self.job(id).map(|j| j.status), Some(JobStatus::Pending | JobStatus::Running))
    }

    /// Registers the job as pending and queues it, or rejects it when the
    /// session already has one or the queue is full.
    fn enqueue(&self, job: Job) -> Result<(), AppError> {
        let mut jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
        let id = job.session_id.clone();
        if matches!(jobs.get(&id).map(|j| j.status), Some(JobStatus::Pending | JobStatus::Running)) {
            return Err(AppError::JobInFlight(id));
        }
        self.queue.try_send(job).map_err(|_| AppError::QueueFull)?;
        jobs.insert(id, JobState { status: JobStatus::Pending, error: None });
        Ok(())
    }

    fn execute(&self, job: &Job) -> Result<(), AppError> {
        let lock = self.session_lock(&job.session_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        match &job.kind {
            JobKind::Optimize { raw, opts, models } => {
                let engine = (self.engines)(models).map_err(Error::from)?;
                engine.run_session(raw, opts, &self.store, Some(job.session_id.clone()))?;
            }
            JobKind::Reoptimize => {
                let engine = (self.engines)(&ModelOverrides::default()).map_err(Error::from)?;
                let mut s = self.store.load(&job.session_id)?;
                engine.reoptimize(&self.store, &mut s)?;
            }
        }
        Ok(())
    }
}

async fn worker(state: std::sync::Weak<AppState>, mut rx: mpsc::Receiver<Job>) {
    while let Some(job) = rx.recv().await {
        let Some(st) = state.upgrade() else { break };
        st.set_job(&job.session_id, JobStatus::Running, None);
        let runner = st.clone();
        let id = job.session_id.clone();
        let outcome = tokio::task::spawn_blocking(move || runner.execute(&job)).await;
        match outcome {
            Ok(Ok(())) => st.set_job(&id, JobStatus::Done, None),
            Ok(Err(e)) => {
                tracing::warn!(session = %id, error = e.name(), detail = %e, "job failed");
                st.set_job(&id, JobStatus::Error, Some(e.body()));
            }
            Err(panic) => {
                let body = ErrorBody { error: "InternalError".into(), detail: panic.to_string() };
                st.set_job(&id, JobStatus::Error, Some(body));
            }
        }
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type ApiResult = Result<Response, AppError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, AppError> + Send + 'static) -> Result<T, AppError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::Engine(SessionError::Storage(format!("worker panicked: {e}")).into()))?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, AppError> {
    serde_json::from_slice(body).map_err(|e| AppError::InvalidRequest(e.to_string()))
}

async fn healthz() -> &'static str {
    "ok"
}

async fn post_optimize(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: OptimizeRequest = parse_body(&body)?;
    let opts = req.validate()?;
    let session_id = uuid::Uuid::new_v4().to_string();
    st.enqueue(Job {
        session_id: session_id.clone(),
        kind: JobKind::Optimize { raw: req.raw_input, opts, models: req.models.unwrap_or_default() },
    })?;
    let body = StatusBody { session_id, status: JobStatus::Pending, error: None, result: None };
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

async fn list_sessions(State(st): State<Arc<AppState>>) -> ApiResult {
    let list = blocking(move || Ok(st.store.list()?)).await?;
    Ok(Json(list).into_response())
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let s = blocking(move || Ok(st.store.load(&id)?)).await?;
    Ok(Json(session_document(&s)).into_response())
}

async fn get_dataset(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let s = blocking(move || Ok(st.store.load(&id)?)).await?;
    Ok(Json(dataset_document(&s)).into_response())
}

async fn post_feedback(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let item = blocking(move || {
        if !st.store.exists(&id) {
            return Err(SessionError::NotFound(id).into());
        }
        let draft: FeedbackDraft = parse_body(&body)?;
        if st.in_flight(&id) {
            return Err(AppError::JobInFlight(id));
        }
        let lock = st.session_lock(&id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut s = st.store.load(&id)?;
        Ok(session::record_feedback(&st.store, &mut s, draft)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(item)).into_response())
}

async fn post_reoptimize(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let id = blocking(move || {
        let s = st.store.load(&id)?;
        if st.in_flight(&id) {
            return Err(AppError::JobInFlight(id));
        }
        if s.unresolved_count() == 0 && !s.needs_reoptimization {
            return Err(SessionError::ReoptimizationNotRequired.into());
        }
        st.enqueue(Job { session_id: id.clone(), kind: JobKind::Reoptimize })?;
        Ok(id)
    })
    .await?;
    let body = StatusBody { session_id: id, status: JobStatus::Pending, error: None, result: None };
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

async fn get_status(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let body = blocking(move || {
        let job = st.job(&id);
        let status = match &job {
            Some(j) => j.status,
            None if st.store.exists(&id) => JobStatus::Done,
            None => return Err(SessionError::NotFound(id).into()),
        };
        let result = match status {
            JobStatus::Done => Some(OptimizeResponse::of(&st.store.load(&id)?)),
            _ => None,
        };
        Ok(StatusBody { session_id: id, status, error: job.and_then(|j| j.error), result })
    })
    .await?;
    Ok(Json(body).into_response())
}

async fn not_found() -> AppError {
    AppError::Engine(SessionError::NotFound("no such route".into()).into())
}

/// Serving options beyond the store and providers.
#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub cors_origin: Option<String>,
    pub ui_dir: Option<PathBuf>,
}

pub fn router(state: Arc<AppState>, opts: &ServeOptions) -> Result<Router, AppError> {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/optimize", post(post_optimize))
        .route("/v1/sessions", get(list_sessions))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/dataset", get(get_dataset))
        .route("/v1/sessions/{id}/feedback", post(post_feedback))
        .route("/v1/sessions/{id}/reoptimize", post(post_reoptimize))
        .route("/v1/sessions/{id}/status", get(get_status))
        .with_state(state);
    let mut app = match &opts.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    if let Some(origin) = &opts.cors_origin {
        let origin = HeaderValue::from_str(origin)
            .map_err(|e| AppError::InvalidRequest(format!("bad --cors-origin {origin:?}: {e}")))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}

/// Binds and serves until ctrl-c.
pub async fn serve(
    addr: std::net::SocketAddr,
    store: SessionStore,
    providers: ProviderSettings,
    opts: ServeOptions,
) -> std::io::Result<()> {
    let state = AppState::start(store, settings_factory(providers));
    let app = router(state, &opts).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
