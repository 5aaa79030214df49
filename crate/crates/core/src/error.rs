use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("duplicate node: {0}")]
    DuplicateNode(String),
    #[error("layer violation: {0}")]
    LayerViolation(String),
    #[error("node {0} not found")]
    NodeNotFound(String),
    #[error("node {id} not at {expected} layer")]
    WrongLayer { id: String, expected: &'static str },
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("event `{0}` is excluded from concept discovery")]
    ExcludedEvent(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("records from more than one event passed to candidate discovery")]
    MixedEvents,
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("need at least {k} distinct vectors for the codebook, found {distinct}")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("no codebook for channel `{0}`")]
    MissingCodebook(String),
    #[error("image has no patches")]
    NoPatches,
    #[error("cannot decode image: {0}")]
    ImageDecode(String),
    #[error("bad {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("all pairwise distances are zero in channel {channel}")]
    DegenerateSigma { channel: usize },
    #[error("only {available} negatives available, {requested} requested")]
    InsufficientNegatives { available: usize, requested: usize },
    #[error("kernel {kernel} is not positive semidefinite (pivot {value:e})")]
    NotPsd { kernel: usize, value: f64 },
    #[error("training labels contain a single class")]
    OneClass,
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("phrase `{0}` has no words after tokenization")]
    EmptyPhrase(String),
    #[error("query unmatched: no concept has positive similarity to `{0}`")]
    QueryUnmatched(String),
    #[error("rank lists do not cover the same videos")]
    MismatchedVideoSets,
    #[error("ranking has no relevant items")]
    NoRelevant,
    #[error("representation layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("missing detector for concept {0}")]
    MissingDetector(String),
    #[error("video `{0}` has no usable frames")]
    NoFrames(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing upstream: {0}")]
    MissingUpstream(String),
    #[error("config hash mismatch for stage {stage}: built under {found}, current {expected}")]
    ConfigHashMismatch {
        stage: String,
        found: String,
        expected: String,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for precondition failures, 3 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::MissingUpstream(_)
            | Error::ConfigHashMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::WrongLayer { .. }
            | Error::ExcludedEvent(_)
            | Error::MissingCodebook(_)
            | Error::MissingDetector(_) => 2,
            _ => 3,
        }
    }
}
