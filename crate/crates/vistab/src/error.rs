//! Crate-wide error type.
//!
//! All fallible operations return [`crate::Result`]. Variants carry enough
//! context (index, offending value, file line) for the caller to report the
//! failure without re-deriving it.

use thiserror::Error;

/// Error cases surfaced by validation, numerics, I/O, and config parsing.
#[derive(Debug, Error)]
pub enum Error {
    /// Two containers that must have equal lengths do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A standard deviation or other strictly-positive quantity was not.
    #[error("{name} must be positive, got {value} (index {index})")]
    NonPositive {
        name: &'static str,
        value: f64,
        index: usize,
    },

    /// A standard deviation fell below the configured floor.
    #[error("standard deviation {value} at index {index} is below the floor {floor}")]
    StdBelowFloor {
        value: f64,
        index: usize,
        floor: f64,
    },

    /// A scalar argument was outside its admissible range.
    #[error("{name} out of range: {reason}")]
    OutOfRange { name: &'static str, reason: String },

    /// A probability vector failed validation.
    #[error("invalid probability vector: {reason}")]
    InvalidProbabilities { reason: String },

    /// KL between discrete distributions is undefined: p places mass where q has none.
    #[error("support violation at outcome {index}: p={p} but q=0")]
    SupportViolation { index: usize, p: f64 },

    /// An example's label does not fit the declared class count.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// An index into a dataset or parameter vector was out of bounds.
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    /// A dataset had no rows where at least one was required.
    #[error("dataset is empty")]
    EmptyDataset,

    /// Training produced a non-finite loss or gradient.
    #[error("non-finite value encountered at step {step}: {what}")]
    NonFinite { step: usize, what: &'static str },

    /// Two quantities that must differ were identical (e.g. twin-run initializations).
    #[error("degenerate input: {reason}")]
    Degenerate { reason: String },

    /// A text or CSV input failed to parse.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// An experiment config failed validation.
    #[error("config error: {reason}")]
    Config { reason: String },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Shorthand for [`Error::OutOfRange`].
    pub fn out_of_range(name: &'static str, reason: impl Into<String>) -> Self {
        Error::OutOfRange {
            name,
            reason: reason.into(),
        }
    }

    /// Shorthand for [`Error::Config`].
    pub fn config(reason: impl Into<String>) -> Self {
        Error::Config {
            reason: reason.into(),
        }
    }

    /// Shorthand for [`Error::Io`] carrying the offending path.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
