use std::path::PathBuf;

/// Errors produced anywhere in the generation / verification flow.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dims: {0}")]
    Dims(String),

    #[error("element count overflows for dims {0}")]
    Overflow(String),

    #[error("unknown axis `{0}`")]
    UnknownAxis(String),

    #[error("axis `{axis}`: {what} out of bounds (size {size})")]
    OutOfBounds {
        axis: String,
        what: String,
        size: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid convolution: {0}")]
    Conv(String),

    #[error("invalid machine model: {0}")]
    Machine(String),

    #[error("blocking constraints violated: {}", .0.join("; "))]
    Blocking(Vec<String>),

    #[error("variant `{variant}` cannot implement this op: {reason}")]
    Plan { variant: String, reason: String },

    #[error("unbound %({0})")]
    UnboundPlaceholder(String),

    #[error("template: {0}")]
    Template(String),

    #[error("malformed IR: {0}")]
    Ir(String),

    #[error("emulator: {0}")]
    Emulation(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("op `{op}`: {source}")]
    Op {
        op: String,
        #[source]
        source: Box<Error>,
    },

    #[error("verification failed for `{0}`: {1}")]
    Verification(String, String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
