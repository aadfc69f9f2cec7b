use alloc::string::String;

use crate::types::{AgentId, Day};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("infeasible population: {demanded} workers demanded but only {available} eligible adults")]
    Infeasible { demanded: u64, available: u64 },
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("day {day} is outside the calendar (0..{days})")]
    DayOutOfRange { day: Day, days: u32 },
    #[error("death probability table has no entry for age group {age_group}")]
    MissingDeathEntry { age_group: u8 },
    #[error("cannot seed {requested} infections: only {healthy} healthy agents")]
    TooManySeeds { requested: u32, healthy: u32 },
    #[error("series length mismatch: simulated {simulated}, observed {observed}")]
    LengthMismatch { simulated: usize, observed: usize },
    #[error("unknown grid axis `{0}`")]
    UnknownAxis(String),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}
