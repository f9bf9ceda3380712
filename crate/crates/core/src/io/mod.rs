//! File formats and data sources: the binary matrix container (with a CSV
//! fallback), dataset manifests, flat `key = value` config files, training
//! checkpoints and the synthetic planted-problem generator.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod manifest;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use container::{read_matrix, write_matrix};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: bad magic bytes, not a CDZM matrix container", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: unsupported container version {version}", path.display())]
    UnsupportedVersion { path: PathBuf, version: u16 },

    #[error("{}: unsupported dtype tag {tag}", path.display())]
    UnsupportedDtype { path: PathBuf, tag: u8 },

    #[error("{}: truncated payload, expected {expected} bytes but found {found}", path.display())]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{}: {extra} unexpected bytes after the payload", path.display())]
    TrailingBytes { path: PathBuf, extra: u64 },

    #[error("{}: dimensions {rows}x{cols} are too large", path.display())]
    DimensionOverflow { path: PathBuf, rows: u64, cols: u64 },

    #[error("{}: non-finite value at row {row}, column {col}", path.display())]
    NonFiniteValue { path: PathBuf, row: usize, col: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("could not place {classes} prototypes at separation {separation} within {draws} draws")]
    RejectionBudgetExceeded {
        classes: usize,
        separation: f64,
        draws: usize,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for errors caused by the user's configuration rather than the data.
    pub fn is_config_error(&self) -> bool {
        matches!(self, DataError::Config { .. })
    }
}
