use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("embedding source contains no vectors")]
    EmptySource,

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("degenerate vector: zero norm")]
    DegenerateVector,

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("image `{image_id}`: {message}")]
    Record { image_id: String, message: String },

    #[error("degenerate box: non-positive extent after clamping ({w} x {h})")]
    DegenerateBox { w: f64, h: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range 0..{len}")]
    Index { index: usize, len: usize },

    #[error("value {value} outside domain: {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no training examples were materialized")]
    EmptyDataset,

    #[error("image `{0}` carries no detections")]
    DetectionsUnavailable(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u64, expected: u64 },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("world generation: {0}")]
    Generation(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
