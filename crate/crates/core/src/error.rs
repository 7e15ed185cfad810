use std::path::PathBuf;

use thiserror::Error;

use crate::regions::BoundingBox;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no picture found next to manifest in {0}")]
    MissingPicture(PathBuf),
    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),
    #[error("sample `{0}` has no sentences")]
    EmptySample(String),
    #[error("unknown label `{0}` (expected HC or AD)")]
    UnknownLabel(String),
    #[error("malformed manifest at line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("degenerate crop {0}")]
    DegenerateCrop(BoundingBox),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dataset lacks samples of class {0}")]
    MissingLabelClass(&'static str),

    #[error("image is {width}x{height}, need at least 16x16")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("box {bbox} lies outside a {width}x{height} picture")]
    BoxOutOfBounds {
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },

    #[error("empty sentence selection for sample `{0}`")]
    EmptySelection(String),
    #[error("zero-norm embedding at position {0}")]
    ZeroVector(usize),
    #[error("{0} is empty")]
    EmptySet(&'static str),
    #[error("only one class present")]
    SingleClass,
    #[error("no region proposals supplied")]
    NoProposals,
    #[error("only {available} areas survive suppression, {requested} requested")]
    InsufficientAreas { available: usize, requested: usize },
    #[error("infeasible few-shot configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
