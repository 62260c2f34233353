use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("immortal-parameterization rejected: lifespan efficiency and scale must be positive")]
    ImmortalParameterization,

    #[error("history too short for cut windows: {missing:?} (history ends at t={end_time})")]
    HistoryTooShort { missing: Vec<String>, end_time: f64 },

    #[error("degenerate patch: {0} node(s), at least 2 required")]
    DegeneratePatch(usize),

    #[error("cannot balance: class {0} absent from split")]
    CannotBalance(&'static str),

    #[error("unfeaturized node {0}: missing density record")]
    UnfeaturizedNode(usize),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward already ran on this tape; re-run the forward pass first")]
    BackwardTwice,

    #[error("empty {0}")]
    Empty(String),

    #[error("trace format error: {0}")]
    Trace(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
