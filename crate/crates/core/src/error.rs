use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unsupported camera model `{0}` (only PINHOLE and SIMPLE_PINHOLE are supported)")]
    UnsupportedCameraModel(String),
    #[error("missing image file {}", .0.display())]
    MissingImage(PathBuf),
    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("ply: {0}")]
    Ply(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("render output no longer carries its tile binning")]
    BinningDiscarded,
    #[error("training diverged at iteration {iter}: {reason}")]
    Divergence { iter: u64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
