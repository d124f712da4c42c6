use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line} ({content:?}): {message}")]
    Parse {
        line: usize,
        content: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at {location}: {message}")]
    Data { location: String, message: String },

    #[error("geometry error in frame {frame_id:?}: {message}")]
    Geometry { frame_id: String, message: String },

    #[error(
        "dimension mismatch: expected {expected_width}x{expected_height}, found {width}x{height}"
    )]
    Dimension {
        expected_width: u32,
        expected_height: u32,
        width: u32,
        height: u32,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: header declares {expected} payload bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty object: refusing to write a field with no Gaussians")]
    EmptyObject,

    #[error("mask id {id} has no feature row (feature table holds {rows} rows)")]
    MaskIndex { id: u32, rows: usize },

    #[error("unknown object id {id}; valid ids: {valid:?}")]
    UnknownObject { id: u32, valid: Vec<u32> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error signals a broken internal invariant rather than bad input.
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Invariant(_) => true,
            Error::Stage { source, .. } => source.is_internal(),
            _ => false,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
