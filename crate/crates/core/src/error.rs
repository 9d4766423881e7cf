use thiserror::Error;

use crate::poly::MultiIndex;

/// Structural errors. Mathematical verdicts (PSD failure, inconsistency, ...)
/// are not errors; they are reported through certificates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} variables, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("missing moment for index {0}")]
    MissingMoment(MultiIndex),

    #[error("moment matrix needs {} unavailable moments: {}", .0.len(), format_indices(.0))]
    MissingMoments(Vec<MultiIndex>),

    #[error("moment data has no total-mass entry (zero index)")]
    MissingMass,

    #[error("total mass must be positive, got {0}")]
    NonPositiveMass(f64),

    #[error("basis is empty")]
    EmptyBasis,

    #[error("zero multi-index has no dominating polynomial")]
    ZeroMultiIndex,

    #[error("{0} is not a nested prefix of the larger basis")]
    BasisNesting(String),

    #[error("polynomial is not positive at sample point {point:?} (value {value})")]
    NonPositiveDenominator { point: Vec<f64>, value: f64 },

    #[error("invalid atomic measure: {0}")]
    InvalidMeasure(String),

    #[error("missing {direction} weight at ({k1}, {k2})")]
    MissingWeight { direction: &'static str, k1: u32, k2: u32 },

    #[error("invalid weight family: {0}")]
    InvalidWeights(String),

    #[error("flatness violated: {0}")]
    Flatness(String),

    #[error("extraction failed: {0}")]
    Extraction(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

fn format_indices(v: &[MultiIndex]) -> String {
    v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
