//! Allocation-only core of a ward-level agent-based epidemic simulator.
//!
//! The crate builds a synthetic city (agents, families, workplaces, schools,
//! healthcare facilities) from ward and sector tables, and runs a daily
//! stochastic simulation of infection spread under a calendar of
//! non-pharmaceutical interventions: lockdowns, containment zones, school
//! closure, testing, contact tracing and hospital routing.
//!
//! Everything here is `no_std` + `alloc`. File formats, presets and the
//! command line live in the `citysim` companion crate. With the `parallel`
//! feature the per-agent phases and replicate runs fan out over rayon; all
//! randomness comes from keyed [`rng::StreamKey`] substreams, so results do
//! not depend on the thread count.
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod calendar;
pub mod calibration;
pub mod disease;
pub mod engine;
mod error;
pub mod mobility;
mod par;
pub mod policy;
pub mod population;
pub mod rng;
pub mod types;

pub use calendar::{DaySettings, Level, Lockdown, PolicyBlock, PolicyCalendar, SettingsPatch};
pub use error::{Error, Result};
pub use types::{
    Agent, AgentId, Day, DiseaseState, FacilityId, FacilityKind, FamilyId, HealthcareFacility,
    MobilityState, Occupation, SectorId, VirusState, Ward, WardId, WorkAssignment, Workplace,
    WorkplaceId,
};
