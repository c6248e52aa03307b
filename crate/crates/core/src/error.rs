use std::path::PathBuf;

use thiserror::Error;

use crate::transform::ParamVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("expected {expected} values for the grid, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("non-finite value at linear index {0}")]
    NonFiniteValue(usize),

    #[error("resampling to {spacing} mm leaves axis {axis} with zero voxels")]
    DegenerateResample { axis: usize, spacing: f64 },

    #[error("grids differ: {0}")]
    GridMismatch(String),

    #[error("unknown label {0}")]
    UnknownLabel(u8),

    #[error("empty label {0}: no voxels carry it")]
    EmptyLabel(u8),

    #[error("label masks {0} and {1} overlap; an integer label map needs disjoint labels")]
    LabelOverlap(u8, u8),

    #[error("distance stacks do not match: {0}")]
    ChannelMismatch(String),

    #[error("foreground mask is empty")]
    EmptyMask,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite cost or gradient at iteration {iteration} (parameters {params:?})")]
    NonFiniteIteration { iteration: usize, params: ParamVector },

    #[error("optimization exceeded its time limit at iteration {iteration}")]
    Timeout { iteration: usize },

    #[error("no paired landmarks")]
    EmptyLandmarks,

    #[error("landmark sets do not pair: {0}")]
    LandmarkMismatch(String),

    #[error("landmark configuration is degenerate (collinear or coincident points)")]
    DegenerateLandmarks,

    #[error("TRE must be non-negative, got {0}")]
    NegativeTre(f64),

    #[error("degenerate phantom: {0}")]
    DegeneratePhantom(String),

    #[error("no reports to aggregate")]
    EmptyReports,

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the numerical pipeline itself, as opposed to bad
    /// inputs or unreadable files.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteIteration { .. } | Error::DegenerateLandmarks)
    }
}
