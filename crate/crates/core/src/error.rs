use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("skeleton topology error: joint {joint} has parent {parent} (parents must precede children)")]
    Topology { joint: usize, parent: usize },

    #[error("dimension error: {what} expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("timestamps not strictly increasing: {prev} -> {cur}")]
    NonMonotonicTime { prev: f64, cur: f64 },

    #[error("invalid frame input: {0}")]
    InvalidFrame(String),

    #[error("missing stream for component `{0}`")]
    MissingStream(&'static str),

    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("unsupported frame rate: {0}")]
    UnsupportedRate(String),

    #[error("calibration failed: no still segment of at least {min_seconds} s")]
    NoStillSegment { min_seconds: f64 },

    #[error("calibration failed: ambiguous sensor assignment ({0})")]
    AmbiguousAssignment(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),

    #[error("all input components are masked")]
    AllMasked,

    #[error("sequence length mismatch: prediction has {pred} frames, ground truth has {gt}")]
    LengthMismatch { pred: usize, gt: usize },

    #[error("nothing to aggregate")]
    Empty,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateInput(_) | Error::AllMasked => 3,
            Error::NoStillSegment { .. }
            | Error::AmbiguousAssignment(_)
            | Error::Calibration(_) => 4,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
