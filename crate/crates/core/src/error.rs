use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("unsupported encoding: {0}")]
    Unsupported(String),
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error("level undefined for empty waveform")]
    UndefinedLevel,
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("empty target set")]
    EmptyTargets,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("too many targets: {got} (max {max})")]
    TargetCap { got: usize, max: usize },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("insufficient classes: need {need}, have {have}")]
    InsufficientClasses { need: usize, have: usize },
    #[error("degenerate source: {0}")]
    DegenerateSource(String),
    #[error("degenerate loss: {0}")]
    DegenerateLoss(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero-power reference")]
    ZeroReference,
    #[error("session closed")]
    SessionClosed,
    #[error("description unavailable: {0}")]
    DescriptionUnavailable(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }
}
