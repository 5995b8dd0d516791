use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty after filtering (min_interactions = {min_interactions})")]
    EmptyDataset { min_interactions: usize },

    #[error("user {user_id} has only {available} candidate negatives, {required} required")]
    NotEnoughNegatives {
        user_id: String,
        available: usize,
        required: usize,
    },

    #[error("client {client_id} has no training positives")]
    NoTrainPositives { client_id: usize },

    #[error("client {client_id} has no negative candidates")]
    NoNegativeCandidates { client_id: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(
        "cannot sample {n_s} clients from {eligible} eligible (n = {n}); lower n_s or disable consecutive-participation exclusion"
    )]
    InfeasibleSampling { n: usize, n_s: usize, eligible: usize },

    #[error("training diverged at round {round}, client {client_id}: loss = {loss}")]
    Diverged {
        round: usize,
        client_id: usize,
        loss: f64,
    },

    #[error("cannot aggregate an empty set of uploads")]
    EmptyAggregation,

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("mismatched run configurations: {0}")]
    MismatchedRuns(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
