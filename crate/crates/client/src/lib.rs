//! Thin async client for the xmtc HTTP service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use xmtc_core::metrics::{EvalReport, SigTestResult};
use xmtc_core::protocol::{
    AttnRequest, ErrorBody, EvalRequest, IngestRequest, IngestResponse, JobCreated, JobInfo, JobStatus,
    MetricsRequest, SigTestRequest, TrainRequest, TrainResponse, TuneRequest,
};
use xmtc_core::train::{AttentionRecord, EpochLog, TuneOutcome};
use xmtc_core::ErrorKind;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{}", .0.message)]
    Api(ErrorBody),
    #[error("cannot reach service: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Connection failures count as usage errors: the service address is
    /// wrong or the service is down.
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api(b) => b.kind,
            ClientError::Transport(_) => ErrorKind::Usage,
            ClientError::Protocol(_) => ErrorKind::Data,
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
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
            poll: Duration::from_millis(100),
        }
    }

    /// Interval between job status requests.
    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            serde_json::from_slice(&bytes).map_err(|e| ClientError::Protocol(e.to_string()))
        } else {
            match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) => Err(ClientError::Api(body)),
                Err(_) => Err(ClientError::Protocol(format!(
                    "status {status}: {}",
                    String::from_utf8_lossy(&bytes)
                ))),
            }
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<serde_json::Value> {
        self.get("/health").await
    }

    pub async fn ingest(&self, req: &IngestRequest) -> Result<IngestResponse> {
        self.post("/ingest", req).await
    }

    pub async fn start_train(&self, req: &TrainRequest) -> Result<u64> {
        Ok(self.post::<_, JobCreated>("/train", req).await?.job_id)
    }

    pub async fn start_tune(&self, req: &TuneRequest) -> Result<u64> {
        Ok(self.post::<_, JobCreated>("/tune", req).await?.job_id)
    }

    pub async fn job(&self, id: u64) -> Result<JobInfo> {
        self.get(&format!("/jobs/{id}")).await
    }

    /// Polls a job until it finishes, passing each newly completed epoch to
    /// `on_epoch`, and decodes its result.
    pub async fn wait<T: DeserializeOwned>(&self, id: u64, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<T> {
        let mut seen = 0;
        loop {
            let job = self.job(id).await?;
            for log in &job.epochs[seen.min(job.epochs.len())..] {
                on_epoch(log);
            }
            seen = job.epochs.len();
            match job.status {
                JobStatus::Running => tokio::time::sleep(self.poll).await,
                JobStatus::Failed => {
                    return Err(job
                        .error
                        .map(ClientError::Api)
                        .unwrap_or_else(|| ClientError::Protocol(format!("job {id} failed without an error"))))
                }
                JobStatus::Succeeded => {
                    let v = job
                        .result
                        .ok_or_else(|| ClientError::Protocol(format!("job {id} has no result")))?;
                    return serde_json::from_value(v).map_err(|e| ClientError::Protocol(e.to_string()));
                }
            }
        }
    }

    pub async fn train(&self, req: &TrainRequest, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainResponse> {
        let id = self.start_train(req).await?;
        self.wait(id, on_epoch).await
    }

    pub async fn tune(&self, req: &TuneRequest) -> Result<TuneOutcome> {
        let id = self.start_tune(req).await?;
        self.wait(id, &mut |_| {}).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalReport> {
        self.post("/eval", req).await
    }

    pub async fn sigtest(&self, req: &SigTestRequest) -> Result<SigTestResult> {
        self.post("/sigtest", req).await
    }

    pub async fn attn(&self, req: &AttnRequest) -> Result<AttentionRecord> {
        self.post("/attn", req).await
    }

    pub async fn metrics(&self, req: &MetricsRequest) -> Result<EvalReport> {
        self.post("/metrics", req).await
    }
}
