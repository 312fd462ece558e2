//! Job service: generation over HTTP with progress streamed as server-sent
//! events.
//!
//! | route | |
//! |---|---|
//! | `POST /api/jobs` | submit a [`GenerationRequest`], returns `{"id"}` |
//! | `GET /api/jobs/{id}` | job status |
//! | `GET /api/jobs/{id}/result` | motion file |
//! | `GET /api/jobs/{id}/trace` | refinement trace (detailing only) |
//! | `GET /api/jobs/{id}/events` | SSE: `progress`, `refinement`, `state` |
//! | `POST /api/jobs/{id}/cancel` | cancel a queued or running job |
//! | `GET /api/skeleton` | skeleton |
//!
//! A subscriber first receives every event emitted so far, then live ones;
//! the stream ends after the terminal `state` event.

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blockdetail::detailing::{DetailProgress, RefinementEvent};
use blockdetail::io::SkeletonDoc;
use blockdetail::skeleton::SkeletonSpec;
use futures::stream::{self, Stream, StreamExt};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::{broadcast, mpsc};

use crate::config::RunConfig;
use crate::error::{CliError, ErrorKind};
use crate::generate::{parse_request, run_generation, GenerationJob};
use crate::models::{model_path, resolve, CheckpointCache, LoadedModels};

/// Progress events go out every this many steps, at `t = 1` and at every
/// refinement event.
pub const PROGRESS_EVERY: usize = 50;
pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Progress {
    /// Last denoising step reported; 0 before the first.
    pub t: usize,
    pub steps: usize,
    pub fraction: f64,
    pub events_emitted: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: String,
    pub state: JobState,
    pub progress: Progress,
    pub strategy: String,
    pub seed: u64,
    /// Content hash of the motion file once done.
    pub result: Option<String>,
    pub has_trace: bool,
    pub error: Option<CliError>,
}

#[derive(Debug, Clone)]
struct JobEvent {
    name: &'static str,
    data: Value,
}

impl JobEvent {
    fn terminal(&self) -> bool {
        self.name == "state"
            && self.data["state"]
                .as_str()
                .is_some_and(|s| s == "done" || s == "failed")
    }
}

struct Job {
    request: GenerationJob,
    models: LoadedModels,
    status: Mutex<JobStatus>,
    history: Mutex<Vec<JobEvent>>,
    events: broadcast::Sender<JobEvent>,
    cancel: AtomicBool,
}

impl Job {
    fn emit(&self, name: &'static str, data: Value) {
        let event = JobEvent { name, data };
        // Held across the send so subscribers never miss or repeat an event.
        let mut history = self.history.lock().expect("history lock");
        history.push(event.clone());
        let _ = self.events.send(event);
    }

    /// Moves to `state` unless already terminal. Returns whether it moved.
    fn transition(&self, state: JobState, error: Option<CliError>) -> bool {
        let snapshot = {
            let mut status = self.status.lock().expect("status lock");
            if status.state.is_terminal() || (status.state == JobState::Running && state == JobState::Queued) {
                return false;
            }
            status.state = state;
            status.error = error;
            status.clone()
        };
        self.emit(
            "state",
            json!({ "state": snapshot.state, "error": snapshot.error, "result": snapshot.result }),
        );
        true
    }

    fn subscribe(&self) -> (Vec<JobEvent>, broadcast::Receiver<JobEvent>) {
        let history = self.history.lock().expect("history lock");
        (history.clone(), self.events.subscribe())
    }
}

struct Shared {
    config: RunConfig,
    data_dir: PathBuf,
    skeleton: SkeletonSpec<f64>,
    cache: CheckpointCache,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    queue: mpsc::UnboundedSender<Arc<Job>>,
    /// Shared by the workers; held here so submission works with none.
    pending: Arc<tokio::sync::Mutex<mpsc::UnboundedReceiver<Arc<Job>>>>,
}

/// Service state; cloning shares it.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    /// Starts `workers` job runners on the current tokio runtime. With no
    /// workers, jobs stay queued.
    pub fn new(config: RunConfig, data_dir: PathBuf, workers: usize) -> Result<Self, CliError> {
        config.validate()?;
        let (tx, rx) = mpsc::unbounded_channel::<Arc<Job>>();
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        let state = Self {
            shared: Arc::new(Shared {
                config,
                data_dir,
                skeleton: SkeletonSpec::desk(),
                cache: CheckpointCache::default(),
                jobs: Mutex::new(HashMap::new()),
                queue: tx,
                pending: rx,
            }),
        };
        for _ in 0..workers {
            let rx = state.shared.pending.clone();
            let st = state.clone();
            tokio::spawn(async move {
                loop {
                    let Some(job) = rx.lock().await.recv().await else { break };
                    let st = st.clone();
                    let _ = tokio::task::spawn_blocking(move || st.execute(&job)).await;
                }
            });
        }
        Ok(state)
    }

    fn job(&self, id: &str) -> Result<Arc<Job>, CliError> {
        self.shared
            .jobs
            .lock()
            .expect("jobs lock")
            .get(id)
            .cloned()
            .ok_or_else(|| CliError::not_found(format!("no job `{id}`")))
    }

    pub fn submit(&self, body: &[u8]) -> Result<String, CliError> {
        let shared = &self.shared;
        let request = parse_request(body)?;
        let job = request.validate(&shared.skeleton, &shared.config.refinement)?;
        let models = resolve(
            &request.models,
            |name| model_path(&shared.data_dir, name),
            &shared.cache,
            &shared.skeleton,
            job.blocking.timeline_length(),
            &shared.config.noise_schedule()?,
        )?;
        let id = uuid::Uuid::new_v4().to_string();
        let (events, _) = broadcast::channel(256);
        let status = JobStatus {
            id: id.clone(),
            state: JobState::Queued,
            progress: Progress {
                steps: shared.config.schedule.steps,
                ..Progress::default()
            },
            strategy: job.strategy.label(),
            seed: job.seed,
            result: None,
            has_trace: false,
            error: None,
        };
        let job = Arc::new(Job {
            request: job,
            models,
            status: Mutex::new(status),
            history: Mutex::new(Vec::new()),
            events,
            cancel: AtomicBool::new(false),
        });
        job.emit("state", json!({ "state": JobState::Queued }));
        shared.jobs.lock().expect("jobs lock").insert(id.clone(), job.clone());
        shared
            .queue
            .send(job)
            .map_err(|_| CliError::new(ErrorKind::Internal, "job queue closed"))?;
        Ok(id)
    }

    pub fn status(&self, id: &str) -> Result<JobStatus, CliError> {
        Ok(self.job(id)?.status.lock().expect("status lock").clone())
    }

    /// Queued jobs fail at once; running jobs stop at their next step.
    pub fn cancel(&self, id: &str) -> Result<JobStatus, CliError> {
        let job = self.job(id)?;
        job.cancel.store(true, Ordering::SeqCst);
        let queued = job.status.lock().expect("status lock").state == JobState::Queued;
        if queued {
            job.transition(JobState::Failed, Some(CliError::new(ErrorKind::Cancelled, "cancelled")));
        }
        self.status(id)
    }

    fn result_path(&self, hash: &str, suffix: &str) -> PathBuf {
        self.shared.data_dir.join("results").join(format!("{hash}{suffix}"))
    }

    pub fn result(&self, id: &str) -> Result<Vec<u8>, CliError> {
        let hash = self.finished(id)?;
        let path = self.result_path(&hash, ".json");
        std::fs::read(&path).map_err(|e| CliError::io(&path, e))
    }

    pub fn trace(&self, id: &str) -> Result<Vec<u8>, CliError> {
        let hash = self.finished(id)?;
        let path = self.result_path(&hash, ".trace.json");
        if !path.exists() {
            return Err(CliError::not_found(format!("job `{id}` has no trace")));
        }
        std::fs::read(&path).map_err(|e| CliError::io(&path, e))
    }

    fn finished(&self, id: &str) -> Result<String, CliError> {
        let status = self.status(id)?;
        status.result.ok_or_else(|| {
            CliError::new(
                ErrorKind::Conflict,
                format!(
                    "job `{id}` is {}",
                    serde_json::to_value(status.state).expect("state serializes")
                ),
            )
        })
    }

    fn execute(&self, job: &Job) {
        if job.cancel.load(Ordering::SeqCst) || !job.transition(JobState::Running, None) {
            return;
        }
        let mut observer = |p: DetailProgress<'_>| -> blockdetail::Result<()> {
            if job.cancel.load(Ordering::SeqCst) {
                return Err(blockdetail::Error::Cancelled);
            }
            match p {
                DetailProgress::Step { t, steps } => {
                    let progress = {
                        let mut status = job.status.lock().expect("status lock");
                        status.progress.t = t;
                        status.progress.steps = steps;
                        status.progress.fraction = (steps + 1 - t) as f64 / steps as f64;
                        status.progress.clone()
                    };
                    if t % PROGRESS_EVERY == 0 || t == 1 {
                        job.emit("progress", serde_json::to_value(progress).expect("progress serializes"));
                    }
                }
                DetailProgress::Refinement(event) => {
                    let count = {
                        let mut status = job.status.lock().expect("status lock");
                        status.progress.events_emitted += 1;
                        status.progress.events_emitted
                    };
                    job.emit("refinement", refinement_payload(event, count));
                }
            }
            Ok(())
        };
        let outcome = run_generation(&job.request, &job.models, &self.shared.skeleton, &mut observer)
            .and_then(|out| self.store(&out.motion_json, out.trace.as_ref().map(|t| t.to_json())));
        match outcome {
            Ok((hash, has_trace)) => {
                {
                    let mut status = job.status.lock().expect("status lock");
                    status.result = Some(hash);
                    status.has_trace = has_trace;
                }
                job.transition(JobState::Done, None);
            }
            Err(e) => {
                job.transition(JobState::Failed, Some(e));
            }
        }
    }

    /// Writes the motion (and trace) under its content hash.
    fn store(&self, motion: &str, trace: Option<String>) -> Result<(String, bool), CliError> {
        let hash = hex::encode(Sha256::digest(motion.as_bytes()));
        let dir = self.shared.data_dir.join("results");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = self.result_path(&hash, ".json");
        std::fs::write(&path, motion).map_err(|e| CliError::io(&path, e))?;
        if let Some(trace) = &trace {
            let path = self.result_path(&hash, ".trace.json");
            std::fs::write(&path, trace).map_err(|e| CliError::io(&path, e))?;
        }
        Ok((hash, trace.is_some()))
    }

    fn events(&self, id: &str) -> Result<impl Stream<Item = JobEvent> + Send + 'static, CliError> {
        let job = self.job(id)?;
        let (history, rx) = job.subscribe();
        let done = history.iter().any(JobEvent::terminal);
        let live = stream::unfold((rx, done), |(mut rx, done)| async move {
            if done {
                return None;
            }
            loop {
                match rx.recv().await {
                    Ok(e) => {
                        let end = e.terminal();
                        return Some((e, (rx, end)));
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        });
        Ok(stream::iter(history).chain(live))
    }
}

fn refinement_payload(event: &RefinementEvent, count: usize) -> Value {
    json!({
        "t": event.t,
        "events_emitted": count,
        "keys": event.keys,
        "condition": event.condition,
    })
}

impl IntoResponse for CliError {
    fn into_response(self) -> Response {
        let code = match self.kind {
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Cancelled => StatusCode::CONFLICT,
            ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(json!({ "error": self }))).into_response()
    }
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn submit_job(State(app): State<AppState>, body: Bytes) -> Result<Response, CliError> {
    let id = tokio::task::spawn_blocking(move || app.submit(&body))
        .await
        .map_err(|e| CliError::new(ErrorKind::Internal, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn get_job(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>, CliError> {
    app.status(&id).map(Json)
}

async fn get_result(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, CliError> {
    app.result(&id).map(json_bytes)
}

async fn get_trace(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, CliError> {
    app.trace(&id).map(json_bytes)
}

async fn cancel_job(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>, CliError> {
    app.cancel(&id).map(Json)
}

async fn job_events(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, CliError> {
    let events = app
        .events(&id)?
        .map(|e| Ok(Event::default().event(e.name).data(e.data.to_string())));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn skeleton(State(app): State<AppState>) -> Json<SkeletonDoc> {
    Json(SkeletonDoc::from_spec(&app.shared.skeleton))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/jobs", post(submit_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/result", get(get_result))
        .route("/api/jobs/{id}/trace", get(get_trace))
        .route("/api/jobs/{id}/events", get(job_events))
        .route("/api/jobs/{id}/cancel", post(cancel_job))
        .route("/api/skeleton", get(skeleton))
        .with_state(state)
}

pub struct ServeOptions {
    pub addr: String,
    pub workers: usize,
    pub data_dir: PathBuf,
    pub config: RunConfig,
}

pub async fn serve(options: ServeOptions) -> Result<(), CliError> {
    let state = AppState::new(options.config, options.data_dir, options.workers)?;
    let listener = tokio::net::TcpListener::bind(&options.addr)
        .await
        .map_err(|e| CliError::new(ErrorKind::Io, format!("{}: {e}", options.addr)))?;
    eprintln!("listening on http://{}", options.addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))
}
