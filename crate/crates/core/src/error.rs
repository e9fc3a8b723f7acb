use std::path::PathBuf;

/// Errors raised anywhere in the benchmark library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector is not unit-norm (|v| = {norm})")]
    NotUnit { norm: f64 },

    #[error("{path}: row {row}: {reason}")]
    MalformedRow { path: PathBuf, row: usize, reason: String },

    #[error("{path}: row {row}: timestamps must be strictly increasing within a trace")]
    NonMonotoneTime { path: PathBuf, row: usize },

    #[error("trace spans {span} s, shorter than one sample interval of {dt} s")]
    SpanTooShort { span: f64, dt: f64 },

    #[error("unknown video id `{0}`")]
    UnknownVideo(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("model has not been trained")]
    Untrained,

    #[error("no saliency maps available for video `{0}`")]
    MissingSaliency(String),

    #[error("saliency sequence for `{video}` has {have} frames, need {need}")]
    SaliencyTooShort { video: String, have: usize, need: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
