//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

use crate::ClassId;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// More prototypes requested than the embedding dimension supports
    /// (`num_classes > dim + 1`).
    Dimension { num_classes: usize, dim: usize },
    /// Argument outside its mathematical domain.
    Domain(String),
    /// Class label has no assigned prototype vertex.
    MissingClass(ClassId),
    /// Two buffers that must agree in shape do not.
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A batch with no usable views or anchors.
    EmptyBatch,
    /// An anchor view with no positive partner in the batch.
    DegenerateAnchor { index: usize },
    /// Prototype set required but empty.
    EmptyPrototypes,
    /// Invalid configuration value.
    Config(String),
    /// The training protocol was violated (stage ordering, missing teacher, ...).
    Protocol(String),
    /// Forward cache does not match the parameters or batch it is used with.
    Cache(String),
    /// Accuracy matrix is missing entries required by a metric.
    IncompleteMatrix,
    /// Metric is undefined for this input (e.g. forgetting with one task).
    UndefinedMetric(String),
    /// A class with fewer samples than the diagnostic needs.
    DegenerateClass(ClassId),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { num_classes, dim } => write!(
                f,
                "cannot place {num_classes} equidistant prototypes in dimension {dim} \
                 (requires num_classes <= dim + 1)"
            ),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::MissingClass(c) => write!(f, "class {c} has no assigned prototype"),
            Error::Shape { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::EmptyBatch => write!(f, "batch has no usable views"),
            Error::DegenerateAnchor { index } => {
                write!(f, "anchor {index} has no positive view in the batch")
            }
            Error::EmptyPrototypes => write!(f, "prototype set is empty"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Protocol(msg) => write!(f, "protocol violation: {msg}"),
            Error::Cache(msg) => write!(f, "stale or mismatched forward cache: {msg}"),
            Error::IncompleteMatrix => write!(f, "accuracy matrix is missing required entries"),
            Error::UndefinedMetric(msg) => write!(f, "metric undefined: {msg}"),
            Error::DegenerateClass(c) => {
                write!(f, "class {c} has too few samples for this diagnostic")
            }
        }
    }
}

impl core::error::Error for Error {}
