use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no poses")]
    NoPoses,
    #[error("non-finite pose component `{0}`")]
    NonFinitePose(&'static str),
    #[error("invalid pose statistics: {0}")]
    InvalidStats(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("resolution mismatch: checkpoint expects {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    Resolution { expected_h: usize, expected_w: usize, got_h: usize, got_w: usize },
    #[error("missing pretrained weights: {0}")]
    MissingPretrainedWeights(String),
    #[error("missing sub-aperture {row}_{col}")]
    MissingView { row: usize, col: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at stage {stage} epoch {epoch} step {step}: {detail}")]
    NonFiniteLoss { stage: usize, epoch: usize, step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint parameter `{name}`: {detail}")]
    CheckpointParam { name: String, detail: String },
    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec: {0}")]
    Codec(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Codec(e.to_string())
    }
}
