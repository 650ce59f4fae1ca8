use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("invalid header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },

    #[error("invalid design: {0}")]
    Design(String),

    #[error("buyer `{buyer}` is assigned more than once (`{first}` and `{second}`)")]
    DuplicateBuyer {
        buyer: String,
        first: String,
        second: String,
    },

    #[error("seller `{0}` has interactions but no outcome row")]
    MissingOutcome(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("empty graph: no qualifying interaction events")]
    EmptyGraph,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no exposure variation: regression design matrix is rank deficient")]
    NoExposureVariation,

    #[error("estimator failed in {failed} of {total} bootstrap replicates")]
    ReplicateFailures { failed: usize, total: usize },

    #[error("pairwise variance needs n <= {n_max} (got {n}); use bootstrap or raise the limit")]
    TooLarge { n: usize, n_max: usize },

    #[error("degenerate exposure pairs under strict policy: {0:?}")]
    DegeneratePairs(Vec<(String, String)>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(line: u64, message: impl Into<String>) -> Self {
        Error::Malformed {
            line,
            message: message.into(),
        }
    }
}
