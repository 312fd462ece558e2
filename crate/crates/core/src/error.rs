use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no blocking poses")]
    NoBlockingPoses,

    #[error("pose mask selects no joints")]
    EmptyMask,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid blocking set: {0}")]
    InvalidBlocking(String),

    #[error("tolerance {value} for joint {joint} lies outside [0, 1]")]
    Tolerance { joint: usize, value: f64 },

    #[error("timestep {t} outside [{min}, {max}]")]
    Timestep { t: usize, min: usize, max: usize },

    #[error("motion needs F ≥ 2 frames, got {0}")]
    TooFewFrames(usize),

    #[error("jitter needs F ≥ 4 frames, got {0}")]
    JitterTooShort(usize),

    #[error("non-finite value at frame {frame}, joint {joint}, coordinate {coord}")]
    NonFinite { frame: usize, joint: usize, coord: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(
        "skeleton mismatch: expected J={expected_joints}, D={expected_dims}, found J={found_joints}, D={found_dims}"
    )]
    SkeletonMismatch {
        expected_joints: usize,
        expected_dims: usize,
        found_joints: usize,
        found_dims: usize,
    },

    #[error("unsupported format_version {0} (expected 1)")]
    FormatVersion(u64),

    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("invalid noise schedule: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset clips have inconsistent frame counts ({expected} vs {found})")]
    InconsistentDataset { expected: usize, found: usize },

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("unknown motion kind `{0}`")]
    UnknownKind(String),

    #[error("malformed condition from step hook: {0}")]
    MalformedCondition(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("model mode mismatch: {0}")]
    ModelMode(String),

    #[error("empty motion set")]
    EmptySet,

    #[error("invalid strategy: {0}")]
    Strategy(String),

    #[error("cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
