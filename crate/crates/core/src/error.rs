use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Detect,
    Window,
    Classify,
    Vote,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Detect => "detect",
            Stage::Window => "window",
            Stage::Classify => "classify",
            Stage::Vote => "vote",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: empty manifest", path.display())]
    EmptyManifest { path: PathBuf },

    #[error("{}: row {row} (line {line}): {message}", path.display())]
    MalformedRow {
        path: PathBuf,
        row: usize,
        line: u64,
        message: String,
    },

    #[error(
        "{}: row {row}: duplicate row ({image_path}, {identity}), first seen on row {first_row}",
        path.display()
    )]
    DuplicateRow {
        path: PathBuf,
        row: usize,
        first_row: usize,
        image_path: String,
        identity: String,
    },

    #[error("fold count k={k} is invalid for {entries} entries (need 2 <= k <= entries)")]
    InvalidFoldCount { k: usize, entries: usize },

    #[error("fold assignment does not match manifest: {0}")]
    FoldMismatch(String),

    #[error("image {path}: {message}")]
    Image { path: String, message: String },

    #[error("zero-area bounding box")]
    ZeroAreaBox,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("detector backend: {0}")]
    Detector(String),

    #[error("classifier backend: {0}")]
    Classifier(String),

    #[error("window side {actual} does not match backend input side {expected}")]
    SideMismatch { expected: u32, actual: u32 },

    #[error("score vector has length {actual}, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("score vector is not a probability distribution: {0}")]
    Normalization(String),

    #[error("window {index}: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("{image_path}: {source}")]
    Entry {
        image_path: String,
        #[source]
        source: Box<Error>,
    },

    #[error("model file {}: {message}", path.display())]
    Model { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Stage attribution, if this error was raised inside the pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            Error::Entry { source, .. } | Error::BatchItem { source, .. } => source.stage(),
            _ => None,
        }
    }
}
