//! HTTP/JSON front end over the library operations.
//!
//! Short operations answer inline. Grid runs and pretraining return a job
//! that is polled at `/v1/jobs/{id}`.

mod jobs;
mod service;

use std::sync::Arc;

use atsc_core::api::{
    ApiError, CorpusRequest, Health, IngestRequest, PredictRequest, PretrainRequest, RenderRequest, ReportRequest,
    RunRequest, ScoreRequest, ZTestRequest,
};
use atsc_core::Error;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;

pub use jobs::JobStore;
pub use service::Service;

#[derive(Clone)]
pub struct AppState {
    service: Arc<Service>,
    jobs: JobStore,
}

impl AppState {
    pub fn new(service: Service) -> Self {
        AppState {
            service: Arc::new(service),
            jobs: JobStore::default(),
        }
    }
}

/// A failed request: status plus JSON body.
pub struct Failure(StatusCode, ApiError);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::InvalidInput(_) | Error::Template { .. } | Error::AspectContainsMask(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::UnknownLabel(_) | Error::LengthMismatch { .. } | Error::SampleTooLarge { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::NoBackend(_) => StatusCode::NOT_FOUND,
            Error::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => StatusCode::NOT_FOUND,
            Error::Unsupported { .. } | Error::BaselineUntrained => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Failure(status, api_error(e))
    }
}

impl From<JsonRejection> for Failure {
    fn from(e: JsonRejection) -> Self {
        Failure(
            e.status(),
            ApiError {
                error: e.body_text(),
                problems: Vec::new(),
            },
        )
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn api_error(e: Error) -> ApiError {
    let problems = match &e {
        Error::Config(p) => p.clone(),
        _ => Vec::new(),
    };
    ApiError {
        error: e.to_string(),
        problems,
    }
}

type Reply<T> = Result<Json<T>, Failure>;

/// Runs a blocking service call off the async executor.
async fn blocking<T, F>(state: &AppState, call: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> atsc_core::Result<T> + Send + 'static,
{
    let service = state.service.clone();
    let outcome = tokio::task::spawn_blocking(move || call(&service))
        .await
        .map_err(|e| Failure(StatusCode::INTERNAL_SERVER_ERROR, ApiError { error: e.to_string(), problems: Vec::new() }))?;
    Ok(Json(outcome?))
}

fn job<T, F>(state: &AppState, kind: &str, call: F) -> (StatusCode, Json<atsc_core::api::JobStatus>)
where
    T: Serialize,
    F: FnOnce(&Service) -> atsc_core::Result<T> + Send + 'static,
{
    let service = state.service.clone();
    let status = state.jobs.spawn(kind, move || call(&service).map_err(api_error));
    (StatusCode::ACCEPTED, Json(status))
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn ingest(State(state): State<AppState>, body: Result<Json<IngestRequest>, JsonRejection>) -> impl IntoResponse {
    let Json(request) = body?;
    blocking(&state, move |s| s.ingest(&request)).await
}

async fn corpus(State(state): State<AppState>, body: Result<Json<CorpusRequest>, JsonRejection>) -> impl IntoResponse {
    let Json(request) = body?;
    blocking(&state, move |s| s.corpus(&request)).await
}

async fn render(State(state): State<AppState>, body: Result<Json<RenderRequest>, JsonRejection>) -> impl IntoResponse {
    let Json(request) = body?;
    blocking(&state, move |s| s.render(&request)).await
}

async fn predict(State(state): State<AppState>, body: Result<Json<PredictRequest>, JsonRejection>) -> impl IntoResponse {
    let Json(request) = body?;
    blocking(&state, move |s| s.predict(&request)).await
}

async fn report(State(state): State<AppState>, body: Result<Json<ReportRequest>, JsonRejection>) -> impl IntoResponse {
    let Json(request) = body?;
    blocking(&state, move |s| s.report(&request)).await
}

async fn score(State(state): State<AppState>, body: Result<Json<ScoreRequest>, JsonRejection>) -> impl IntoResponse {
    let Json(request) = body?;
    blocking(&state, move |s| s.score(&request)).await
}

async fn z_test(State(state): State<AppState>, body: Result<Json<ZTestRequest>, JsonRejection>) -> impl IntoResponse {
    let Json(request) = body?;
    blocking(&state, move |s| s.z_test(&request)).await
}

async fn run(
    State(state): State<AppState>,
    body: Result<Json<RunRequest>, JsonRejection>,
) -> Result<impl IntoResponse, Failure> {
    let Json(request) = body?;
    Ok(job(&state, "run", move |s| s.run(&request)))
}

async fn pretrain(
    State(state): State<AppState>,
    body: Result<Json<PretrainRequest>, JsonRejection>,
) -> Result<impl IntoResponse, Failure> {
    let Json(request) = body?;
    Ok(job(&state, "pretrain", move |s| s.pretrain(&request)))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    match state.jobs.get(&id) {
        Some(status) => Ok(Json(status)),
        None => Err(Failure(
            StatusCode::NOT_FOUND,
            ApiError {
                error: format!("no job `{id}`"),
                problems: Vec::new(),
            },
        )),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/ingest", post(ingest))
        .route("/v1/corpus", post(corpus))
        .route("/v1/prompts/render", post(render))
        .route("/v1/predict", post(predict))
        .route("/v1/runs", post(run))
        .route("/v1/pretrain", post(pretrain))
        .route("/v1/jobs/{id}", get(job_status))
        .route("/v1/report", post(report))
        .route("/v1/metrics/score", post(score))
        .route("/v1/metrics/ztest", post(z_test))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
