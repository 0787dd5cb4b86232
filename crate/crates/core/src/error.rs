use alloc::string::String;

use crate::ids::VehicleId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A quantity left its mathematical domain (non-finite, non-positive gap, ...).
    #[error("domain error: {quantity} = {value}")]
    Domain { quantity: &'static str, value: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// Every particle weight vanished or became non-finite.
    #[error(
        "filter degeneracy at observed position {observation}: log-weight range [{min_log_weight}, {max_log_weight}]"
    )]
    Degenerate {
        observation: f64,
        min_log_weight: f64,
        max_log_weight: f64,
    },

    #[error("all resampling weights are zero")]
    ZeroWeights,

    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),

    #[error("vehicle {vehicle} is missing frame {frame}")]
    MissingFrame { vehicle: VehicleId, frame: i64 },

    #[error("input error: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn domain(quantity: &'static str, value: f64) -> Self {
        Error::Domain { quantity, value }
    }

    pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}
