use std::path::PathBuf;

use thiserror::Error;

use crate::scenario::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt scenario payload: {0}")]
    Corrupt(String),

    #[error("unsupported format_version {0:?}")]
    UnsupportedVersion(String),

    #[error("scenario failed validation: {0}")]
    Invalid(ValidationReport),

    #[error("unknown object id {0:?}")]
    UnknownObject(String),

    #[error("unknown lane id {0:?}")]
    UnknownLane(String),

    #[error("object {id:?} typed {first} and {second} in different frames")]
    TypeConflict {
        id: String,
        first: String,
        second: String,
    },

    #[error("frame log has inconsistent frame spacing: {0}")]
    InconsistentDt(String),

    #[error("map has no lanes")]
    EmptyMap,

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("duplicate scenario id {0:?}")]
    DuplicateScenario(String),

    #[error("no input converted successfully")]
    NoSuccessfulConversions,

    #[error("output directory {0} is not empty")]
    OutDirNotEmpty(PathBuf),

    #[error("malformed database manifest: {0}")]
    Manifest(String),

    #[error("invalid filter predicate: {0}")]
    Predicate(String),

    #[error("split fractions must be nonnegative and sum to 1, got {train} + {test}")]
    BadFractions { train: f64, test: f64 },

    #[error("cannot sample {n} scenarios from a database of {total}")]
    SampleTooLarge { n: usize, total: usize },

    #[error("database is empty")]
    EmptyDatabase,

    #[error("unknown agent {0:?}")]
    UnknownAgent(String),

    #[error("missing action for agent {0:?}")]
    MissingAction(String),

    #[error("invalid action for agent {0:?}: components must be finite")]
    BadAction(String),

    #[error("agent {0:?} is not accepting actions")]
    DeadAgent(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("unknown worker {0}")]
    UnknownWorker(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
