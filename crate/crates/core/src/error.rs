use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the hypervector algebra, the learning pipeline and the
/// corpus loaders.
#[derive(Debug, Error)]
pub enum HdError {
    #[error("invalid dimension: {0} (must be at least 1)")]
    InvalidDimension(usize),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("cannot bundle an empty list of hypervectors")]
    EmptyBundle,

    #[error("unknown sensor {sensor} (encoder has {sensors} sensors)")]
    UnknownSensor { sensor: usize, sensors: usize },

    #[error("sensor count mismatch: segment has {got}, encoder expects {expected}")]
    SensorCount { got: usize, expected: usize },

    #[error("window holds {got} levels, n-gram size is {expected}")]
    WindowLength { got: usize, expected: usize },

    #[error("segment {segment} has {timesteps} timesteps, fewer than the n-gram size {ngram}")]
    SegmentTooShort {
        segment: u64,
        timesteps: usize,
        ngram: usize,
    },

    #[error("segment {0} has sensors of unequal length")]
    RaggedSegment(u64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("domain {domain} out of range for {domains} domains")]
    DomainOutOfRange { domain: usize, domains: usize },

    #[error("no training samples for domain(s) {0:?}")]
    EmptyDomains(Vec<usize>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no domain meets the in-distribution threshold {delta_star}")]
    NoQualifyingDomain { delta_star: f64 },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("model container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HdError {
    /// True for errors caused by malformed input data rather than bad
    /// parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            HdError::Data { .. }
                | HdError::Io(_)
                | HdError::Csv(_)
                | HdError::Json(_)
                | HdError::Container(_)
                | HdError::SegmentTooShort { .. }
                | HdError::RaggedSegment(_)
                | HdError::SensorCount { .. }
                | HdError::EmptyDomains(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HdError>;
