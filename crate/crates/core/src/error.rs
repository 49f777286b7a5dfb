use std::io;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{kind} expects {expected} inputs, got {got}")]
    WrongInputCount {
        kind: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no valid distant frame: sequence has {frames} frames but the distant offset is at least {gamma_frames}")]
    NoValidDistantFrame { frames: usize, gamma_frames: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("label {label} out of range for {num_phases} phases")]
    LabelOutOfRange { label: usize, num_phases: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("video {0} has no phase labels")]
    MissingLabels(String),

    #[error("non-finite loss {value} ({context})")]
    NonFiniteLoss { value: f64, context: String },

    #[error("unknown layer {0:?}")]
    UnknownLayer(String),

    #[error("shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("no valid tuples can be sampled from: {}", .0.join("; "))]
    InfeasibleVideos(Vec<String>),

    #[error("video {video_id}: {source}")]
    Video {
        video_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_video(self, video_id: &str) -> Error {
        Error::Video {
            video_id: video_id.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
