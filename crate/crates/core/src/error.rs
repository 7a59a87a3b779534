use thiserror::Error;

use crate::data::dicom::DicomError;
use crate::engine::checkpoint::CheckpointError;
use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },

    #[error("loss must be a scalar (1,1,1,1), got {0}")]
    NotScalar(Shape),

    #[error("group count {groups} does not divide channel count {channels}")]
    GroupsDoNotDivide { groups: usize, channels: usize },

    #[error("empty partition cell (every cell needs at least one element)")]
    EmptyPartition,

    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("statistics uninitialized: running statistics are required in infer mode")]
    StatisticsUninitialized,

    #[error("operation requires a blend normalization kind, got {0}")]
    NotBlendKind(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no contour: mask is empty")]
    NoContour,

    #[error("degenerate contour: {0}")]
    DegenerateContour(String),

    #[error("open contour: a closed polygon is required")]
    OpenContour,

    #[error("contour parse error at line {line}: {message}")]
    ContourParse { line: usize, message: String },

    #[error("not enough cases: {cases} cases for {parts} partitions")]
    NotEnoughCases { cases: usize, parts: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Dicom(#[from] DicomError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("sample format error in {path}: {message}")]
    SampleFormat { path: String, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used by the CLI for machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::DataLength { .. } => "data_length",
            Error::NotScalar(_) => "not_scalar",
            Error::GroupsDoNotDivide { .. } => "groups_do_not_divide",
            Error::EmptyPartition => "empty_partition",
            Error::ChannelMismatch { .. } => "channel_mismatch",
            Error::InvalidSize(_) => "invalid_size",
            Error::NonFinite { .. } => "non_finite",
            Error::StatisticsUninitialized => "statistics_uninitialized",
            Error::NotBlendKind(_) => "not_blend_kind",
            Error::InvalidConfig(_) => "invalid_config",
            Error::NoContour => "no_contour",
            Error::DegenerateContour(_) => "degenerate_contour",
            Error::ContourParse { .. } => "contour_parse",
            Error::OpenContour => "open_contour",
            Error::NotEnoughCases { .. } => "not_enough_cases",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Empty(_) => "empty",
            Error::Dicom(e) => e.kind(),
            Error::Checkpoint(e) => e.kind(),
            Error::SampleFormat { .. } => "sample_format",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
