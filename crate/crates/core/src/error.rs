use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the segmentation pipeline.
#[derive(Debug, Error)]
pub enum PcmError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("missing window for subject {0}")]
    MissingWindow(String),

    #[error("invalid window for subject {subject}: {message}")]
    InvalidWindow { subject: String, message: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("region has zero area")]
    ZeroArea,

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("column {column} has zero variance over available entries")]
    ZeroVarianceColumn { column: String },

    #[error("graph too large for exact enumeration: {states} label fields")]
    GraphTooLarge { states: f64 },

    #[error("parameters outside the surrogate design box: {0}")]
    Extrapolation(String),

    #[error("insufficient simulations per design point: {got} < {floor}")]
    InsufficientSimulations { got: usize, floor: usize },

    #[error("no surrogate available for graph signature {0}")]
    SurrogateMissing(String),

    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("distance {r} outside the curve domain [{lo}, {hi}]")]
    DistanceOutOfRange { r: f64, lo: f64, hi: f64 },

    #[error("too few items: {0}")]
    TooFewItems(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PcmError>;

impl PcmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PcmError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used for machine-parseable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            PcmError::Io { .. } => "io",
            PcmError::Csv(_) => "csv",
            PcmError::Row { .. } => "row",
            PcmError::MissingWindow(_) => "missing_window",
            PcmError::InvalidWindow { .. } => "invalid_window",
            PcmError::InvalidGrid(_) => "invalid_grid",
            PcmError::ZeroArea => "zero_area",
            PcmError::DegenerateCovariance(_) => "degenerate_covariance",
            PcmError::ZeroVarianceColumn { .. } => "zero_variance_column",
            PcmError::GraphTooLarge { .. } => "graph_too_large",
            PcmError::Extrapolation(_) => "extrapolation",
            PcmError::InsufficientSimulations { .. } => "insufficient_simulations",
            PcmError::SurrogateMissing(_) => "surrogate_missing",
            PcmError::NonFinite { .. } => "non_finite",
            PcmError::DistanceOutOfRange { .. } => "distance_out_of_range",
            PcmError::TooFewItems(_) => "too_few_items",
            PcmError::Config(_) => "config",
            PcmError::Parse(_) => "parse",
        }
    }
}
