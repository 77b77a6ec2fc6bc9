use thiserror::Error;

use crate::mdp::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid MDP: {}", format_violations(.0))]
    InvalidMdp(Vec<Violation>),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("reward r({state},{action},{layer}) = {value} lies outside [0, 1]")]
    RewardOutOfRange {
        state: usize,
        action: usize,
        layer: usize,
        value: f64,
    },

    #[error("reward r({state},{action},{layer}) = {value} is negative")]
    NegativeReward {
        state: usize,
        action: usize,
        layer: usize,
        value: f64,
    },

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("replay tape exhausted: episode {requested} requested, tape holds {available}")]
    ReplayExhausted { requested: usize, available: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("incomplete run record: {0}")]
    IncompleteRecord(String),

    #[error("adaptive reward source used without acknowledging that no regret guarantee applies")]
    AdaptiveNotAcknowledged,
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
