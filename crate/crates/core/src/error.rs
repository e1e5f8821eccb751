use std::path::PathBuf;

/// Errors produced by the localization toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("raster too small: {width}x{height} cannot hold a {tile_size}px tile")]
    RasterTooSmall {
        width: usize,
        height: usize,
        tile_size: usize,
    },
    #[error("invalid canny parameters: {0}")]
    InvalidCannyParams(String),
    #[error("edge map size mismatch: expected {expected:?}, found {found:?}")]
    EdgeMapSizeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("bad image file {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("cannot mine negatives: batch holds a single position")]
    CannotMineNegatives,
    #[error("too few descriptors: {got} points for {k} clusters")]
    TooFewDescriptors { got: usize, k: usize },
    #[error("image smaller than patch: {width}x{height} < {patch}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("empty index")]
    EmptyIndex,
    #[error("empty score list")]
    EmptyScores,
    #[error("view out of bounds")]
    ViewOutOfBounds,
    #[error("length mismatch: {left} results vs {right} truth positions")]
    LengthMismatch { left: usize, right: usize },
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),
    #[error("bad magic in {what}: expected {expected:?}")]
    BadMagic { what: &'static str, expected: [u8; 4] },
    #[error("unsupported {what} format version {found} (expected {expected})")]
    FormatVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn bad_image(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::BadImage {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
