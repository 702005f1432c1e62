use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive depth {z} mm (joint {joint:?})")]
    NonPositiveDepth { z: f64, joint: Option<usize> },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid crop: scale must be positive, got {0}")]
    InvalidCrop(f64),
    #[error("bounding box has no area")]
    EmptyBBox,
    #[error("pose frame mismatch: expected {expected}, found {found}")]
    FrameMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("pose generation exhausted after {retries} retries")]
    GenerationExhausted { retries: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("no candidate depth offset keeps every joint in front of the camera")]
    NoValidDepth,
    #[error("degenerate projection: every joint lies on the principal ray")]
    DegenerateProjection,
    #[error("head segment has zero length")]
    ZeroHeadSegment,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model file: {0}")]
    Model(String),
    #[error("io error on {path:?}{}: {source}", record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Io {
        path: Option<PathBuf>,
        record: Option<usize>,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            record: None,
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Model(_) => 3,
            Error::InvalidConfig(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io {
            path: None,
            record: None,
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Creates `path` for writing, making any missing parent directories.
pub fn create_file(path: &std::path::Path) -> Result<std::fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}
