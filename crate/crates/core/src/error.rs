use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },

    #[error("sentence {sentence_id}: missing `{attribute}` attribute")]
    MissingAttribute {
        sentence_id: String,
        attribute: &'static str,
    },

    #[error("record {line}: {message}")]
    Record { line: usize, message: String },

    #[error("requested {requested} training examples but only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("invalid prompt template `{pattern}`: {reason}")]
    Template { pattern: String, reason: String },

    #[error("aspect `{0}` contains the mask token")]
    AspectContainsMask(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("{backend} backend does not support {capability}")]
    Unsupported {
        backend: String,
        capability: &'static str,
    },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("expected exactly one mask token, found {0}")]
    MaskCount(usize),

    #[error("degenerate scores: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("baseline undefined without training")]
    BaselineUntrained,

    #[error("tag span {start}..{end} misaligned: {message}")]
    Alignment {
        start: usize,
        end: usize,
        message: String,
    },

    #[error("gold has {gold} labels but predictions have {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("no backend registered for {0}")]
    NoBackend(String),

    #[error("run {fingerprint} failed: {source}")]
    Run {
        fingerprint: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
