//! Crate-wide error type.
//!
//! Numerical routines fail loudly rather than returning poisoned values: a
//! dimension mismatch, a point outside the field's domain, or a Cholesky
//! factorization that stays indefinite after jitter all surface as a
//! [`PiftError`] instead of `NaN`s propagating through a chain.

use thiserror::Error;

/// Errors produced by basis evaluation, linear algebra, samplers and I/O.
#[derive(Debug, Error)]
pub enum PiftError {
    /// A vector had the wrong length for the object consuming it.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    /// A spatial point fell outside the domain of the field parameterization.
    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Vec<f64> },

    /// A configuration value violated its contract (e.g. a decay exponent
    /// outside (1/2, 1], an empty quadrature, a non-positive noise scale).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A covariance matrix stayed non-positive-definite after the jitter
    /// ladder was exhausted.
    #[error("Cholesky factorization failed after jitter up to {max_jitter:e}")]
    CholeskyFailed { max_jitter: f64 },

    /// The symmetric eigensolver returned an eigenvalue more negative than
    /// round-off can explain for a positive semi-definite operator.
    #[error("eigenvalue {value:e} below the PSD round-off floor {floor:e}")]
    NegativeEigenvalue { value: f64, floor: f64 },

    /// A sampler produced a non-finite state or gradient.
    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    /// A chain aborted mid-run on a non-finite state; the rows retained up
    /// to the failure ride along so callers can flush a partial chain.
    #[error("sampler aborted at step {step}: non-finite state; partial chain retained")]
    SamplerAborted {
        step: usize,
        partial: Box<crate::sampler::Chain>,
    },

    /// A mixture component collapsed onto a single point during EM.
    #[error("degenerate mixture component (variance < {floor:e}) after re-initialization")]
    DegenerateComponent { floor: f64 },

    /// Rank statistics are undefined when the predictor values are tied.
    #[error("tied values in the predictor column; ranks are ambiguous")]
    TiedRanks,

    /// An operation that needs samples received an empty collection.
    #[error("empty {what}")]
    Empty { what: &'static str },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, PiftError>;
