use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("domain error at pixel (row {row}, col {col}): {msg}")]
    Domain { row: usize, col: usize, msg: String },

    #[error("point behind camera at pixel (row {row}, col {col}): transformed depth {depth} below near plane {near}")]
    BehindCamera {
        row: usize,
        col: usize,
        depth: f64,
        near: f64,
    },

    #[error("scene generation failed after {attempts} motion attempts")]
    GenerationFailed { attempts: usize },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("manifest error in {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad caller input rather than the filesystem
    /// or a malformed file.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidConfig(_)
                | Error::SingularMatrix(_)
                | Error::Domain { .. }
                | Error::BehindCamera { .. }
                | Error::GenerationFailed { .. }
        )
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
