use thiserror::Error;

/// Errors raised by graph construction, the solvers and the I/O layer.
#[derive(Debug, Error)]
pub enum PgoError {
    #[error("closest rotation is not unique (two smallest singular values coincide){}", pose_suffix(.pose))]
    DegenerateProjection { pose: Option<usize> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("numerical failure at iteration {iteration:?} (robot {robot:?}): {message}")]
    NumericalFailure {
        iteration: Option<usize>,
        robot: Option<usize>,
        message: String,
    },

    #[error("singular subproblem for robot {robot}")]
    SingularSubproblem { robot: usize },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("relative gap requested but no reference objective is available")]
    MissingReference,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn pose_suffix(pose: &Option<usize>) -> String {
    match pose {
        Some(p) => format!(" at pose {p}"),
        None => String::new(),
    }
}

impl PgoError {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        PgoError::NumericalFailure {
            iteration: None,
            robot: None,
            message: message.into(),
        }
    }

    /// Tags a numerical failure with the outer iteration it occurred in.
    pub(crate) fn at_iteration(self, k: usize) -> Self {
        match self {
            PgoError::NumericalFailure {
                iteration: None,
                robot,
                message,
            } => PgoError::NumericalFailure {
                iteration: Some(k),
                robot,
                message,
            },
            other => other,
        }
    }
}

pub type Result<T, E = PgoError> = std::result::Result<T, E>;
