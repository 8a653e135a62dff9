use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

/// Broad failure class, used for CLI exit codes and HTTP error bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Tensor(TensorError::NonFinite(_)) | Error::Numeric(_) => ErrorKind::Numeric,
            Error::Tensor(_) => ErrorKind::Numeric,
            Error::Data(_) | Error::Checkpoint(_) | Error::Io { .. } | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: malformed JSON: {message}")]
    MalformedJson { path: PathBuf, message: String },
    #[error("document {doc_id}: missing field `{field}`")]
    MissingField { doc_id: String, field: &'static str },
    #[error("duplicate document id {0}")]
    DuplicateDocument(String),
    #[error("document {0} has no concepts")]
    NoConcepts(String),
    #[error("concept ids without a descriptor: {0:?}")]
    MissingDescriptors(Vec<String>),
    #[error("embeddings line {line}: expected {expected} values, found {found}")]
    EmbeddingDimension { line: usize, expected: usize, found: usize },
    #[error("embeddings line {line}: {message}")]
    EmbeddingParse { line: usize, message: String },
    #[error("label {0} has no in-vocabulary descriptor tokens")]
    DegenerateDescriptor(String),
    #[error("document {0} has no in-vocabulary tokens")]
    NoInVocabularyTokens(String),
    #[error("document {0} has no tokens to encode")]
    EmptyDocument(String),
    #[error("unknown label id {0}")]
    UnknownLabel(String),
    #[error("unknown document id {0}")]
    UnknownDocument(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
