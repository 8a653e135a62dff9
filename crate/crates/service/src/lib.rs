//! HTTP/JSON front end for the xmtc-core operations.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | GET | `/health` | | `{"status": "ok"}` |
//! | POST | `/ingest` | `IngestRequest` | `IngestResponse` |
//! | POST | `/train` | `TrainRequest` | `202 JobCreated` |
//! | POST | `/tune` | `TuneRequest` | `202 JobCreated` |
//! | GET | `/jobs/{id}` | | `JobInfo` |
//! | POST | `/eval` | `EvalRequest` | `EvalReport` |
//! | POST | `/sigtest` | `SigTestRequest` | `SigTestResult` |
//! | POST | `/attn` | `AttnRequest` | `AttentionRecord` |
//! | POST | `/metrics` | `MetricsRequest` | `EvalReport` |
//!
//! Errors are `ErrorBody` JSON with status 400 (usage), 422 (data) or 500
//! (numeric failure).

pub mod ops;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;

use xmtc_core::protocol::{
    AttnRequest, ErrorBody, EvalRequest, IngestRequest, JobCreated, JobInfo, JobStatus, MetricsRequest,
    SigTestRequest, TrainRequest, TuneRequest,
};
use xmtc_core::{Error, ErrorKind};

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Usage => StatusCode::BAD_REQUEST,
        ErrorKind::Data => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Numeric => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

#[derive(Debug)]
pub struct ApiError(ErrorBody);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(ErrorBody::from(&e))
    }
}

impl ApiError {
    fn usage(message: impl Into<String>) -> Self {
        ApiError(ErrorBody {
            kind: ErrorKind::Usage,
            message: message.into(),
        })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_for(self.0.kind), Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses the body ourselves so malformed requests get an `ErrorBody`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::usage(format!("invalid request body: {e}")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> xmtc_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(ApiError(ErrorBody {
            kind: ErrorKind::Numeric,
            message: format!("worker failed: {e}"),
        })),
    }
}

#[derive(Default)]
struct Jobs {
    next: AtomicU64,
    table: Mutex<HashMap<u64, JobInfo>>,
}

impl Jobs {
    fn create(&self, kind: &str) -> u64 {
        let id = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        self.table.lock().unwrap().insert(
            id,
            JobInfo {
                job_id: id,
                kind: kind.to_owned(),
                status: JobStatus::Running,
                epochs: Vec::new(),
                result: None,
                error: None,
            },
        );
        id
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut JobInfo)) {
        if let Some(job) = self.table.lock().unwrap().get_mut(&id) {
            f(job);
        }
    }

    fn complete<T: Serialize>(&self, id: u64, result: xmtc_core::Result<T>) {
        let result = result.and_then(|r| Ok(serde_json::to_value(r)?));
        self.update(id, |job| match result {
            Ok(v) => {
                job.status = JobStatus::Succeeded;
                job.result = Some(v);
            }
            Err(e) => {
                log::warn!("job {id} failed: {e}");
                job.status = JobStatus::Failed;
                job.error = Some(ErrorBody::from(&e));
            }
        });
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    jobs: Arc<Jobs>,
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn ingest(body: Bytes) -> ApiResult<xmtc_core::protocol::IngestResponse> {
    let req: IngestRequest = parse(&body)?;
    blocking(move || ops::ingest(&req)).await
}

async fn start_train(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<JobCreated>), ApiError> {
    let req: TrainRequest = parse(&body)?;
    req.config.validate()?;
    let jobs = state.jobs.clone();
    let id = jobs.create("train");
    tokio::task::spawn_blocking(move || {
        let observer_jobs = jobs.clone();
        let mut observer = |log: &xmtc_core::train::EpochLog| {
            observer_jobs.update(id, |job| job.epochs.push(log.clone()));
        };
        let result = ops::train(&req, &mut observer);
        jobs.complete(id, result);
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id: id })))
}

async fn start_tune(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<JobCreated>), ApiError> {
    let req: TuneRequest = parse(&body)?;
    req.base.validate()?;
    let jobs = state.jobs.clone();
    let id = jobs.create("tune");
    tokio::task::spawn_blocking(move || jobs.complete(id, ops::tune(&req)));
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id: id })))
}

async fn job(State(state): State<AppState>, Path(id): Path<u64>) -> Result<Json<JobInfo>, (StatusCode, Json<ErrorBody>)> {
    state.jobs.table.lock().unwrap().get(&id).cloned().map(Json).ok_or_else(|| {
        (
            StatusCode::NOT_FOUND,
            Json(ErrorBody {
                kind: ErrorKind::Usage,
                message: format!("no job {id}"),
            }),
        )
    })
}

async fn eval(body: Bytes) -> ApiResult<xmtc_core::metrics::EvalReport> {
    let req: EvalRequest = parse(&body)?;
    blocking(move || ops::eval(&req)).await
}

async fn sigtest(body: Bytes) -> ApiResult<xmtc_core::metrics::SigTestResult> {
    let req: SigTestRequest = parse(&body)?;
    blocking(move || ops::sigtest(&req)).await
}

async fn attn(body: Bytes) -> ApiResult<xmtc_core::train::AttentionRecord> {
    let req: AttnRequest = parse(&body)?;
    blocking(move || ops::attn(&req)).await
}

async fn metrics(body: Bytes) -> ApiResult<xmtc_core::metrics::EvalReport> {
    let req: MetricsRequest = parse(&body)?;
    blocking(move || ops::metrics(&req)).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ingest", post(ingest))
        .route("/train", post(start_train))
        .route("/tune", post(start_tune))
        .route("/jobs/{id}", get(job))
        .route("/eval", post(eval))
        .route("/sigtest", post(sigtest))
        .route("/attn", post(attn))
        .route("/metrics", post(metrics))
        .with_state(AppState::default())
}

/// Serves on `listener` until the task is dropped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok(local)
}
