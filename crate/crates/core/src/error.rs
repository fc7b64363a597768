use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("{0}: backward called before forward")]
    BackwardBeforeForward(&'static str),

    #[error("non-finite loss {value} at batch {batch}")]
    NonFiniteLoss { batch: usize, value: f64 },

    #[error("model is not compiled")]
    NotCompiled,

    #[error("incompatible layers at index {index} ({layer}): {detail}")]
    IncompatibleLayers {
        index: usize,
        layer: String,
        detail: String,
    },

    #[error("architecture mismatch at layer {index}: model has {expected}, file has {found}")]
    ArchitectureMismatch {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("model file format error: {0}")]
    Format(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
