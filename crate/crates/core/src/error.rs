use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::{Point3, SceneBounds};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid superquadric: {0}")]
    InvalidSuperquadric(String),

    #[error("invalid box: min {min:?} exceeds max {max:?}")]
    InvalidBox { min: Point3, max: Point3 },

    #[error("invalid scene bounds {0:?}")]
    InvalidBounds(SceneBounds),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sampler configuration is infeasible: no scene accepted after {restarts} restarts")]
    InfeasibleConfig { restarts: usize },

    #[error("instance {0} has no visible pixels")]
    EmptySegment(u16),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("cost is not finite at the initial estimate")]
    NonFiniteCost,

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("unknown corruption mode `{0}`")]
    UnknownMode(String),

    #[error("empty matching")]
    EmptyMatching,

    #[error("malformed raster {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding failed: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
