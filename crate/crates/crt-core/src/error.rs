use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrtError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{context}: non-finite value")]
    NonFinite { context: String },

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("checkpoint format version {found}, this build reads {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint: {0}")]
    CheckpointShape(String),

    #[error("checkpoint blob truncated: need {need} bytes, file has {have}")]
    CheckpointTruncated { need: u64, have: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("audit: {0}")]
    Audit(String),
}

pub type Result<T> = std::result::Result<T, CrtError>;

impl CrtError {
    /// Process exit code for the CLI: config/validation errors exit 2,
    /// everything else exits 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            CrtError::Config(_) | CrtError::InvalidArgument { .. } => 2,
            _ => 1,
        }
    }

    /// Stable machine-readable tag for the error JSON the CLI emits.
    pub fn kind(&self) -> &'static str {
        match self {
            CrtError::ShapeMismatch { .. } => "shape_mismatch",
            CrtError::InvalidArgument { .. } => "invalid_argument",
            CrtError::NonFinite { .. } => "non_finite",
            CrtError::Config(_) => "config",
            CrtError::Data(_) => "data",
            CrtError::Parse { .. } => "parse",
            CrtError::CheckpointVersion { .. }
            | CrtError::CheckpointShape(_)
            | CrtError::CheckpointTruncated { .. } => "checkpoint",
            CrtError::Io(_) => "io",
            CrtError::Json(_) => "json",
            CrtError::Audit(_) => "audit",
        }
    }
}
