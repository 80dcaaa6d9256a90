use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Matrix whose positive-definiteness gates a Riccati step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GainMatrix {
    Upsilon,
    M,
    Lambda,
}

impl fmt::Display for GainMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GainMatrix::Upsilon => "Upsilon",
            GainMatrix::M => "M",
            GainMatrix::Lambda => "Lambda",
        };
        f.write_str(name)
    }
}

/// Optimality condition checked by a duality certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CertificateItem {
    InnerSolvable,
    Feasibility,
    Slackness,
}

impl fmt::Display for CertificateItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CertificateItem::InnerSolvable => "inner minimization",
            CertificateItem::Feasibility => "feasibility",
            CertificateItem::Slackness => "complementary slackness",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0} is not symmetric")]
    NotSymmetric(String),

    #[error("{0} is not positive semi-definite")]
    NotPsd(String),

    #[error("{0} is not positive definite")]
    NotPd(String),

    #[error("{0} contains non-finite entries")]
    NonFinite(String),

    #[error("failure probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("risk budget {0} is negative")]
    NegativeBudget(f64),

    #[error("innovation covariance is singular at step {step}")]
    SingularInnovation { step: usize },

    #[error("Riccati recursion not solvable at step {step}: {which} is not positive definite")]
    NotSolvable { step: usize, which: GainMatrix },

    #[error("stationary iteration diverged after {iterations} iterations")]
    Diverged { iterations: usize },

    #[error("horizon mismatch: expected {expected} steps, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("risk budget unreachable for multipliers up to {cap:e} (risk {risk})")]
    InfeasibleWithinCap { cap: f64, risk: f64 },

    #[error("risk increased from {risk_low} at mu={mu_low} to {risk_high} at mu={mu_high}")]
    NonMonotoneRisk { mu_low: f64, risk_low: f64, mu_high: f64, risk_high: f64 },

    #[error("certificate failed: {0}")]
    CertificateFailed(CertificateItem),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::NotPsd(_) => "NotPSD",
            Error::NotPd(_) => "NotPD",
            Error::NonFinite(_) => "NonFinite",
            Error::ProbabilityOutOfRange(_) => "ProbabilityOutOfRange",
            Error::NegativeBudget(_) => "NegativeBudget",
            Error::SingularInnovation { .. } => "SingularInnovation",
            Error::NotSolvable { .. } => "NotSolvable",
            Error::Diverged { .. } => "Diverged",
            Error::HorizonMismatch { .. } => "HorizonMismatch",
            Error::InfeasibleWithinCap { .. } => "InfeasibleWithinCap",
            Error::NonMonotoneRisk { .. } => "NonMonotoneRisk",
            Error::CertificateFailed(_) => "CertificateFailed",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
