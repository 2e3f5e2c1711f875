use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no data absorbed")]
    NoData,

    #[error("numerically degenerate rank-one correction (denominator {0:e})")]
    Degenerate(f64),

    #[error("bad magic in {path}: expected \"REPX\", found {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated pool file {path}: expected {expected} rows, found {found}")]
    Truncated { path: PathBuf, expected: u64, found: u64 },

    #[error("truncated pool file {path}: payload needs {expected} bytes, found {found}")]
    TruncatedPayload { path: PathBuf, expected: u64, found: u64 },

    #[error("pool file {path} disagrees with manifest on {field}: manifest {manifest}, file {file}")]
    ManifestMismatch {
        path: PathBuf,
        field: &'static str,
        manifest: u64,
        file: u64,
    },

    #[error("reward labels must be 0 or 1, found {0}")]
    BadReward(u8),

    #[error("malformed manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("malformed config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by filesystem access rather than bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
