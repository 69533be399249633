use thiserror::Error;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("arity mismatch for factor `{factor}`: potential arity {potential_arity}, scope length {scope_len}")]
    ArityMismatch {
        factor: String,
        potential_arity: usize,
        scope_len: usize,
    },
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("invalid evidence value for `{variable}`: {reason}")]
    InvalidEvidenceValue { variable: String, reason: String },
    #[error("invalid declaration: {0}")]
    InvalidDeclaration(String),
    #[error("evidence clustering does not cover the continuous evidence set: {0}")]
    ClusterCoverage(String),
    #[error("recoloring would merge existing color classes: {0}")]
    NonRefinement(String),
    #[error("cluster has a single distinct value and cannot be split")]
    Unsplittable,
    #[error("integrand returned a non-finite value at a quadrature node")]
    NonFiniteIntegrand,
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error("objective diverged (non-finite value)")]
    DivergenceDetected,
    #[error("model is not Gaussian: {0}")]
    NotGaussian(String),
    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("model too large for brute-force enumeration: {0}")]
    TooLarge(String),
    #[error("continuous mass did not converge under the enumeration bound")]
    NonIntegrable,
    #[error("support mismatch between exact and approximate marginals: {0}")]
    SupportMismatch(String),
    #[error("factor arity {arity} exceeds the configured limit {limit}")]
    ArityLimit { arity: usize, limit: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
