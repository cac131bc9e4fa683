use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),

    #[error("buffer of length {len} does not fill shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} at sample {sample} out of range for {classes} classes")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        classes: usize,
    },

    #[error("zero variance: data cannot be standardized")]
    ZeroVariance,

    #[error("dataset is already normalized")]
    AlreadyNormalized,

    #[error("magic mismatch: expected {expected:#010x}, found {found:#010x}")]
    MagicMismatch { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("activation {0} is not supported by relevance propagation")]
    UnsupportedActivation(&'static str),

    #[error("zero denominator in {0}")]
    ZeroDenominator(String),

    #[error("explanation map is identically zero")]
    ZeroMap,

    #[error("manifold constraint {constraint} violated at sample {sample}: residual {residual:e}")]
    ConstraintViolated {
        constraint: usize,
        sample: usize,
        residual: f64,
    },

    #[error("rank deficient: requested rank {requested}, achieved {achieved}")]
    RankDeficient { requested: usize, achieved: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("correlation undefined for constant input")]
    ConstantInput,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
