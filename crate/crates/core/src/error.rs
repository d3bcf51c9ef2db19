use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, the reference solvers and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the grid")]
    OutOfDomain { point: [f64; 3] },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("time step {dt:e} s exceeds the stability bound {bound:e} s")]
    Stability { dt: f64, bound: f64 },

    #[error("degenerate normal at particle {particle}")]
    DegenerateNormal { particle: usize },

    #[error("boundary particle {particle} has no normal")]
    MissingNormal { particle: usize },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation error in {path} at line {line}: {message}")]
    Validation {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("unknown scenario `{name}`; available: {}", .available.join(", "))]
    UnknownScenario {
        name: String,
        available: Vec<String>,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
