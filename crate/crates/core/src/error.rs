use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("unsupported image format: {0} (expected PNG or JPEG)")]
    UnsupportedFormat(PathBuf),

    #[error("corrupt image data in {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {width}x{height} exceeds the {max}x{max} limit")]
    ImageTooLarge { width: usize, height: usize, max: usize },

    #[error("image {width}x{height} is too small: minimum side is {min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("malformed feature file: {0}")]
    MalformedFeatures(String),

    #[error("loss context is missing {0}")]
    MissingContext(&'static str),

    #[error("optimization diverged at iteration {iteration}: total loss is not finite")]
    Divergence { iteration: usize },

    #[error("no PNG or JPEG images in {0}")]
    NoImages(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error("too many regions ({0}) for a 16-bit label map")]
    TooManyLabels(usize),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn mismatch(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
