// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has zero norm")]
    ZeroRowNorm { row: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("region selection is empty or out of range")]
    EmptySelection,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedFile {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("failed to parse {path}: {reason}")]
    ParseFailure { path: PathBuf, reason: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("no labeled samples to score")]
    NoLabeledSamples,

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short variant name, stable across message wording changes.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::ZeroRowNorm { .. } => "ZeroRowNorm",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonPositiveTemperature(_) => "NonPositiveTemperature",
            Error::EmptyInput(_) => "EmptyInput",
            Error::EmptySelection => "EmptySelection",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::InvalidRecord(_) => "InvalidRecord",
            Error::ParseFailure { .. } => "ParseFailure",
            Error::MissingFile(_) => "MissingFile",
            Error::NoLabeledSamples => "NoLabeledSamples",
            Error::Io { .. } => "IoFailure",
            Error::InFile { source, .. } => source.kind_name(),
        }
    }

    /// The innermost error, looking through file-context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            other => other,
        }
    }

    /// Attaches `path` to the error unless it already names a file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. } | Error::MissingFile(_)) => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
