use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scan file {path}: {reason}")]
    MalformedScan { path: PathBuf, reason: String },
    #[error("pose file {path}, line {line}: {reason}")]
    PoseParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("malformed descriptor file {path}: {reason}")]
    MalformedDescriptor { path: PathBuf, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("no points fell inside the grid range")]
    EmptyDescriptor,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate descriptor: {0}")]
    DegenerateDescriptor(String),
    #[error("soft union set is empty")]
    EmptyUnion,
    #[error("no eligible retrieval candidate")]
    NoCandidate,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
