//! Request and response bodies of the HTTP service. Paths refer to the
//! server's filesystem.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{IngestReport, Split};
use crate::error::{Error, ErrorKind};
use crate::metrics::{Metric, RankingScope, DEFAULT_THRESHOLD};
use crate::models::ModelConfig;
use crate::train::{EpochLog, TrainOptions, TrainState, TuneOptions};

fn default_ks() -> Vec<usize> {
    (1..=10).collect()
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_top_k() -> usize {
    5
}

fn default_iterations() -> usize {
    10_000
}

fn default_metric() -> Metric {
    Metric::RPrecision(5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub corpus_dir: PathBuf,
    pub descriptors: PathBuf,
    pub embeddings: PathBuf,
    /// Expected embedding width; inferred from the file when absent.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Directory receiving the cached dataset.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub out: PathBuf,
    pub report: IngestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    /// Cached dataset directory written by ingest.
    pub dataset: PathBuf,
    pub config: ModelConfig,
    #[serde(default)]
    pub options: TrainOptions,
    pub out: PathBuf,
    /// Continue from this checkpoint instead of initializing.
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub checkpoint: PathBuf,
    pub state: TrainState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRequest {
    pub dataset: PathBuf,
    pub base: ModelConfig,
    #[serde(default)]
    pub options: TuneOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub split: Split,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub ranking: RankingScope,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Also write the score matrix as a predictions file.
    #[serde(default)]
    pub predictions_out: Option<PathBuf>,
}

/// Gold labels come either from a gold file or from a split of a cached
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldSource {
    File(PathBuf),
    Dataset { dataset: PathBuf, split: Split },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigTestRequest {
    /// Predictions files of the two systems.
    pub a: PathBuf,
    pub b: PathBuf,
    pub gold: GoldSource,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnRequest {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub doc_id: String,
    /// Label-wise models: heads for this many top-scored labels.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRequest {
    pub predictions: PathBuf,
    pub gold: PathBuf,
    /// Cached dataset whose catalog supplies label buckets; without it only
    /// the `all` scope is reported.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub ranking: RankingScope,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: u64,
}

/// A background train or tune run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobInfo {
    pub job_id: u64,
    pub kind: String,
    pub status: JobStatus,
    /// Epochs completed so far (train jobs).
    #[serde(default)]
    pub epochs: Vec<EpochLog>,
    #[serde(default)]
    pub result: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}
