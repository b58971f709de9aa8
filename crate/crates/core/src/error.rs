use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("relation `{0}` is not one of the retained relations (Actor, Director, Time, Genre, Subject)")]
    RejectedRelation(String),

    #[error("unknown entity id {0}")]
    UnknownEntity(usize),

    #[error("unknown entity `{0}`")]
    UnknownEntityName(String),

    #[error("entity {0} has no neighbors")]
    NoNeighbors(usize),

    #[error("belief state is empty")]
    EmptyBelief,

    #[error("cannot pick a reasoning start: no mentions and no category entities")]
    CannotStart,

    #[error("no reasoning path satisfies the action from any start")]
    NoPath,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("negative sampling needs at least {needed} entities outside the round, found {available}")]
    Sampling { needed: usize, available: usize },

    #[error("template for `{action}` needs slot {slot}, which was not provided")]
    MissingSlot { action: &'static str, slot: &'static str },

    #[error("training error: {0}")]
    Training(String),

    #[error("generator request failed: {0}")]
    Generator(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Bincode(#[from] bincode::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
