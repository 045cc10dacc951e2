use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("kernel of extent {kernel} does not fit an image of {width}x{height}")]
    KernelTooLarge {
        kernel: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid filter bank parameters: {0}")]
    InvalidFilterBank(String),

    #[error("no responses supplied for filter group {0}")]
    MissingResponses(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("need at least {needed} cells, got {got}")]
    TooFewCells { needed: usize, got: usize },

    #[error("non-finite feature value at cell {cell}, dimension {dim}")]
    NonFiniteFeature { cell: usize, dim: usize },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("unknown model id {0:?}")]
    UnknownModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("region of {width}x{height} is too small for detection")]
    RegionTooSmall { width: usize, height: usize },

    #[error("detector {model_id} failed: {reason}")]
    Detector { model_id: String, reason: String },

    #[error("ground truth line {line}: {reason}")]
    GroundTruth { line: usize, reason: String },

    #[error("cannot aggregate an empty metrics list")]
    EmptyMetrics,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
