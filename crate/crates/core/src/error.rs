use thiserror::Error;

use crate::frames::Frame;
use crate::vehicle::VehicleState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("degenerate lift: required specific force {magnitude:.4} m/s^2 is below the direction threshold")]
    DegenerateLift { magnitude: f64 },

    #[error("speed {speed:.3} m/s is below the minimum {min:.3} m/s")]
    LowSpeed { speed: f64, min: f64 },

    #[error("invalid energy model: {0}")]
    InvalidModel(String),

    #[error("infeasible pitch interval: theta_min {theta_min:.4} > theta_max {theta_max:.4}")]
    InfeasibleConstraint { theta_min: f64, theta_max: f64 },

    #[error("envelope violation: {reason}")]
    Envelope {
        reason: String,
        state: Box<VehicleState>,
    },

    #[error("identification failed: {0}")]
    Identification(String),

    #[error("model file: {0}")]
    ModelFile(String),
}

impl Error {
    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) | Error::FrameMismatch { .. } => "invalid-input",
            Error::DegenerateLift { .. } => "degenerate-lift",
            Error::LowSpeed { .. } => "low-speed",
            Error::InvalidModel(_) => "invalid-model",
            Error::InfeasibleConstraint { .. } => "infeasible-constraint",
            Error::Envelope { .. } => "envelope",
            Error::Identification(_) => "identification",
            Error::ModelFile(_) => "model-file",
        }
    }
}
