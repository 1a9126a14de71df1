use thiserror::Error;

use crate::protocol::ProtocolError;

/// Errors produced by the verification engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsvError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("theta = {theta_deg}° is outside the strategy's validity range ({low}°, {high}°)")]
    StrategyRange { theta_deg: f64, low: f64, high: f64 },

    #[error("operator is not Hermitian (max |A - A†| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("degenerate strategy: second eigenvalue {lambda2} is not below 1")]
    DegenerateStrategy { lambda2: f64 },

    #[error("no claim: accept frequency {accept_frequency} admits no fidelity statement at the requested confidence")]
    NoClaim { accept_frequency: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for QsvError {
    fn from(e: std::io::Error) -> Self {
        QsvError::Io(e.to_string())
    }
}

pub type Result<T, E = QsvError> = std::result::Result<T, E>;
