//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the pipeline.
///
/// Variants are grouped by kind so callers (notably the CLI) can map them to
/// exit classes: parameter validation, data/format problems, and numerical
/// failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the bounds its consumer declares.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A raster header is missing fields or cannot be parsed.
    #[error("bad raster header {path}: {reason}")]
    Header { path: String, reason: String },

    /// The raster data type code is not one this reader supports.
    #[error("unsupported raster data type code {code} in {path}")]
    UnsupportedDataType { code: u32, path: String },

    /// The binary companion file does not match the header's declared size.
    #[error("raster size mismatch for {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: String,
        expected: u64,
        found: u64,
    },

    /// Malformed CSV content.
    #[error("bad csv {path} line {line}: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },

    /// Two gridded inputs that must share a shape do not.
    #[error(
        "dimension mismatch: {context} ({left_rows}x{left_cols} vs {right_rows}x{right_cols})"
    )]
    DimensionMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// Cube construction or content violates an invariant.
    #[error("invalid cube: {0}")]
    InvalidCube(String),

    /// A pixel spectrum has zero norm and cannot be normalized.
    #[error("degenerate pixel at (row {row}, col {col}): zero-norm spectrum")]
    DegeneratePixel { row: usize, col: usize },

    /// A mask keeps no pixels.
    #[error("mask keeps no pixels")]
    EmptyMask,

    /// A node or pixel index is out of range.
    #[error("index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },

    /// A label lies outside the declared class range.
    #[error("label {label} out of range 1..={k}")]
    LabelOutOfRange { label: i64, k: usize },

    /// A class-merge spec does not cover an encountered label.
    #[error("merge spec does not map label {label}")]
    UnmappedLabel { label: u32 },

    /// Crown ids are not a contiguous 1..=C set.
    #[error("crown ids are not contiguous: id {missing} is empty but ids up to {max} occur")]
    NonContiguousCrowns { missing: u32, max: u32 },

    /// Refusing to materialize an all-pairs matrix above the configured cap.
    #[error(
        "distance matrix over {n} nodes exceeds the cap of {cap}; \
         use per-row queries or a subset instead"
    )]
    MatrixTooLarge { n: usize, cap: usize },

    /// Data rank is lower than an algorithm requires.
    #[error("rank deficiency in {context}: achieved rank {achieved}, need {needed}")]
    RankDeficient {
        context: &'static str,
        achieved: usize,
        needed: usize,
    },

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure in {context}: {reason}")]
    Numerical {
        context: &'static str,
        reason: String,
    },

    /// An error raised by a named pipeline stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } | Error::EmptyMask => ErrorKind::Validation,
            Error::RankDeficient { .. } | Error::Numerical { .. } => ErrorKind::Numerical,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}

/// Coarse error classes, mirrored by the CLI's exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or parameter bounds.
    Validation,
    /// Unreadable, malformed, or inconsistent input data.
    Data,
    /// A numerical routine failed.
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
