use std::io;

use thiserror::Error;

/// Errors raised by the solvers, the generators and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} lies on the camera plane (depth {depth:e})")]
    DegenerateDepth { index: usize, depth: f64 },

    #[error("focal length must be positive, got {0}")]
    NonPositiveFocal(f64),

    #[error("shape mismatch: expected {expected} correspondences, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("normal equations are not positive definite")]
    SingularSystem,

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),

    #[error("solver requires at least {required} correspondences, got {actual}")]
    InsufficientPoints { required: usize, actual: usize },

    #[error("no subset produced a valid hypothesis")]
    NoValidHypothesis,

    #[error("gave up after {0} rejected samples; scenario bounds are inconsistent")]
    ResampleLimitExceeded(usize),

    #[error("instance carries no ground-truth pose")]
    MissingGroundTruth,

    #[error("non-finite loss at update {update}")]
    NonFiniteLoss { update: u64 },

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status: 1 usage or schema, 2 IO, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::NonFiniteLoss { .. }
            | Error::SingularSystem
            | Error::DegenerateDepth { .. }
            | Error::DegenerateConfiguration(_)
            | Error::NoValidHypothesis
            | Error::ResampleLimitExceeded(_) => 3,
            _ => 1,
        }
    }
}
