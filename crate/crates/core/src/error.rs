use std::path::PathBuf;

use crate::model::HeadId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("index out of range: {what} {index} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("user {user} has interacted with every item; no negative can be sampled")]
    NoNegative { user: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("head {0} is not part of this model")]
    UnknownHead(HeadId),

    #[error("activations were computed for parameter version {cached}, parameters are at version {current}")]
    StaleActivations { cached: u64, current: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} for head {head} at {context}")]
    NonFinite {
        what: &'static str,
        head: HeadId,
        context: String,
    },

    #[error("non-finite score at position {0}")]
    NonFiniteInput(usize),

    #[error("non-finite score for head {head}, user {user}")]
    NonFiniteScore { head: HeadId, user: usize },

    #[error("snapshot queue holds {have} snapshots, {need} required")]
    QueueNotReady { have: usize, need: usize },

    #[error("snapshot epoch {epoch} is not valid for period {period} (last pushed: {last:?})")]
    SnapshotEpoch {
        epoch: usize,
        period: usize,
        last: Option<usize>,
    },

    #[error("list of length {len} is shorter than the requested prefix {n}")]
    ListTooShort { len: usize, n: usize },

    #[error("no consensus available for user {0}")]
    MissingConsensus(usize),

    #[error("row {0} has no positive entries")]
    NoPositives(usize),

    #[error("{0} is undefined for an empty hit set")]
    EmptyHitSet(&'static str),

    #[error("unsupported file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
