//! Scenario files, presets, input/output formats and the command-line
//! driver for the [`citysim_core`] epidemic simulator.

pub mod calibrate;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod presets;
pub mod run;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
