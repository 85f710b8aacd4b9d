use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate question id {0:?}")]
    DuplicateId(String),

    #[error("question {0:?} has empty text")]
    EmptyText(String),

    #[error("repository invariant violated: {0}")]
    Invariant(String),

    #[error("unknown provenance {0:?} (expected cluster-llm, knn or llm-fallback)")]
    UnknownProvenance(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("non-finite value in input: {0}")]
    NonFinite(String),

    #[error("provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("curve is not sorted in non-increasing order (index {0})")]
    UnsortedCurve(usize),

    #[error("cannot build a prompt for an empty cluster")]
    EmptyCluster,

    #[error("label is empty after trimming")]
    EmptyLabel,

    #[error("annotator response contained no labels")]
    EmptyResponse,

    #[error("annotation of cluster {cluster_id} failed: {source}")]
    Annotation {
        cluster_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("label {0:?} is not present in the label index")]
    MissingLabel(String),

    #[error("embedding of label {label:?} failed: {source}")]
    LabelEmbedding {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("question {0:?} has no labels")]
    Unlabeled(String),

    #[error("repository is empty")]
    EmptyRepository,

    #[error("question {0:?} has no cached embedding")]
    MissingEmbedding(String),

    #[error("unparseable judge output ({message}): {raw}")]
    Judge { message: String, raw: String },

    #[error("score {field}={value} outside [{min}, {max}]")]
    ScoreRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("reports cover different corpora ({0} vs {1})")]
    CorpusMismatch(String, String),

    #[error("{phase} phase failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_phase(self, phase: &'static str) -> Self {
        match self {
            e @ Error::Phase { .. } => e,
            e => Error::Phase {
                phase,
                source: Box::new(e),
            },
        }
    }
}
