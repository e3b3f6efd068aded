use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A per-video failure that the batch pipeline records and skips.
    #[error("pipeline error for video `{video_id}`: {message}")]
    Pipeline { video_id: String, message: String },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("checkpoint load error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Pipeline { .. })
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) | Error::Invariant(_) => 2,
            Error::Numeric(_) => 4,
            Error::Shape(_)
            | Error::Data(_)
            | Error::Index(_)
            | Error::Pipeline { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Image(_) => 3,
        }
    }
}
