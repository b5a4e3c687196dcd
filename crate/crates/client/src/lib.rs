//! Typed client for the atsc HTTP service.

use std::time::Duration;

use atsc_core::api::{
    ApiError, CorpusRequest, CorpusResponse, Health, IngestRequest, IngestResponse, JobState, JobStatus,
    PredictRequest, PredictResponse, PretrainRequest, PretrainSummary, RenderRequest, RenderResponse, ReportRequest,
    ReportResponse, RunRequest, RunSummary, ScoreRequest, ZTestRequest,
};
use atsc_core::metrics::{EvalReport, SignificanceResult};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    #[error("server answered {status}: {}", body.error)]
    Api { status: u16, body: ApiError },

    #[error("unexpected response: {0}")]
    Decode(#[from] serde_json::Error),
}

impl ClientError {
    /// Validation problems reported by the server, if any.
    pub fn problems(&self) -> &[String] {
        match self {
            ClientError::Api { body, .. } => &body.problems,
            _ => &[],
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    poll: Duration,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8417`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
            poll: Duration::from_millis(200),
        }
    }

    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T> {
        let status = response.status();
        let bytes = response.bytes().await?;
        if status.is_success() {
            return Ok(serde_json::from_slice(&bytes)?);
        }
        let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| ApiError {
            error: String::from_utf8_lossy(&bytes).into_owned(),
            problems: Vec::new(),
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let response = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(response).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let response = self.http.get(format!("{}{path}", self.base)).send().await?;
        Self::decode(response).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn ingest(&self, request: &IngestRequest) -> Result<IngestResponse> {
        self.post("/v1/ingest", request).await
    }

    pub async fn corpus(&self, request: &CorpusRequest) -> Result<CorpusResponse> {
        self.post("/v1/corpus", request).await
    }

    pub async fn render(&self, request: &RenderRequest) -> Result<RenderResponse> {
        self.post("/v1/prompts/render", request).await
    }

    pub async fn predict(&self, request: &PredictRequest) -> Result<PredictResponse> {
        self.post("/v1/predict", request).await
    }

    pub async fn report(&self, request: &ReportRequest) -> Result<ReportResponse> {
        self.post("/v1/report", request).await
    }

    pub async fn score(&self, request: &ScoreRequest) -> Result<EvalReport> {
        self.post("/v1/metrics/score", request).await
    }

    pub async fn z_test(&self, request: &ZTestRequest) -> Result<SignificanceResult> {
        self.post("/v1/metrics/ztest", request).await
    }

    pub async fn submit_run(&self, request: &RunRequest) -> Result<JobStatus> {
        self.post("/v1/runs", request).await
    }

    pub async fn submit_pretrain(&self, request: &PretrainRequest) -> Result<JobStatus> {
        self.post("/v1/pretrain", request).await
    }

    pub async fn job(&self, id: &str) -> Result<JobStatus> {
        self.get(&format!("/v1/jobs/{id}")).await
    }

    /// Polls until the job leaves the running state and decodes its output.
    pub async fn wait<T: DeserializeOwned>(&self, job: JobStatus) -> Result<T> {
        let mut status = job;
        while status.state == JobState::Running {
            tokio::time::sleep(self.poll).await;
            status = self.job(&status.id).await?;
        }
        match (status.output, status.error) {
            (Some(output), _) if status.state == JobState::Succeeded => Ok(serde_json::from_value(output)?),
            (_, error) => Err(ClientError::Api {
                status: 500,
                body: error.unwrap_or_else(|| ApiError {
                    error: format!("job {} failed", status.id),
                    problems: Vec::new(),
                }),
            }),
        }
    }

    pub async fn run(&self, request: &RunRequest) -> Result<RunSummary> {
        let job = self.submit_run(request).await?;
        self.wait(job).await
    }

    pub async fn pretrain(&self, request: &PretrainRequest) -> Result<PretrainSummary> {
        let job = self.submit_pretrain(request).await?;
        self.wait(job).await
    }
}
