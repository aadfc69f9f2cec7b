//! Per-agent disease course and pairwise transmission probability.
//!
//! A newly infected agent draws a viral load from a Beta distribution. A
//! load at or above the symptomatic threshold makes the agent symptomatic
//! once the fixed incubation period ends. The peak and the time from peak
//! to recovery are rounded Gaussian draws. Symptomatic agents resolve death
//! or recovery once, on their peak day, from an age-group by comorbidity
//! table; asymptomatic agents always recover.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{Day, DiseaseState, VirusState, MAX_AGE_GROUP};

/// Death probability per age group, split by comorbidity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeathTable {
    /// `rows[age_group] = [without comorbidity, with comorbidity]`.
    pub rows: Vec<[f64; 2]>,
}

impl DeathTable {
    pub fn uniform(p: f64) -> Self {
        DeathTable { rows: vec![[p, p]; MAX_AGE_GROUP as usize + 1] }
    }

    pub fn get(&self, age_group: u8, comorbidity: bool) -> Result<f64> {
        self.rows
            .get(age_group as usize)
            .map(|r| r[usize::from(comorbidity)])
            .ok_or(Error::MissingDeathEntry { age_group })
    }
}

impl Default for DeathTable {
    /// Case fatality among symptomatic cases, rising with age and roughly
    /// doubled by comorbidity.
    fn default() -> Self {
        DeathTable {
            rows: vec![
                [0.0002, 0.0005],
                [0.0002, 0.0005],
                [0.0005, 0.0015],
                [0.0010, 0.0030],
                [0.0030, 0.0080],
                [0.0080, 0.0200],
                [0.0200, 0.0500],
                [0.0500, 0.1000],
                [0.1000, 0.1800],
                [0.1500, 0.2500],
                [0.2000, 0.3000],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiseaseParams {
    pub beta_a: f64,
    pub beta_b: f64,
    pub symptomatic_threshold: f64,
    pub incubation_days: u32,
    pub peak_mean_days: f64,
    pub peak_sd_days: f64,
    pub recovery_mean_days: f64,
    pub recovery_sd_days: f64,
    /// Per hour, at unit distance.
    pub base_transmission_rate: f64,
    /// Infectiousness of asymptomatic carriers relative to symptomatic ones.
    pub asymptomatic_infectiousness: f64,
    pub death: DeathTable,
}

impl Default for DiseaseParams {
    fn default() -> Self {
        DiseaseParams {
            beta_a: 2.0,
            beta_b: 5.0,
            symptomatic_threshold: 0.3,
            incubation_days: 5,
            peak_mean_days: 7.0,
            peak_sd_days: 2.0,
            recovery_mean_days: 14.0,
            recovery_sd_days: 3.0,
            base_transmission_rate: 0.002,
            asymptomatic_infectiousness: 0.5,
            death: DeathTable::default(),
        }
    }
}

impl DiseaseParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("beta_a", self.beta_a), ("beta_b", self.beta_b)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        // A zero spread is allowed and gives a fixed phase length.
        let spreads = [
            ("peak_sd_days", self.peak_sd_days),
            ("recovery_sd_days", self.recovery_sd_days),
        ];
        for (name, v) in spreads {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
        }
        if !(self.peak_mean_days > 0.0 && self.recovery_mean_days > 0.0) {
            return Err(Error::config("phase means must be positive"));
        }
        if !(self.symptomatic_threshold > 0.0 && self.symptomatic_threshold < 1.0) {
            return Err(Error::config("symptomatic_threshold must lie in (0, 1)"));
        }
        if !(self.base_transmission_rate >= 0.0 && self.base_transmission_rate.is_finite()) {
            return Err(Error::config("base_transmission_rate must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.asymptomatic_infectiousness) {
            return Err(Error::config("asymptomatic_infectiousness must lie in [0, 1]"));
        }
        if self.death.rows.len() <= MAX_AGE_GROUP as usize {
            return Err(Error::config(format!(
                "death table needs {} age-group rows, has {}",
                MAX_AGE_GROUP + 1,
                self.death.rows.len()
            )));
        }
        if self.death.rows.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("death probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn sample_viral_load(params: &DiseaseParams, rng: &mut Stream) -> f64 {
    if params.beta_a == 1.0 && params.beta_b == 1.0 {
        return rng.uniform();
    }
    let dist = Beta::new(params.beta_a, params.beta_b).expect("validated shape parameters");
    dist.sample(rng).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Dies,
    Recovers,
}

/// The planned course of one infection, as offsets from the infection day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Courseplan {
    pub symptomatic: bool,
    /// Day symptoms start; `None` for asymptomatic courses.
    pub onset_offset: Option<u32>,
    pub peak_day_offset: u32,
    pub recovery_or_death_day_offset: u32,
    /// Drawn on the peak day for symptomatic courses.
    pub outcome: Option<Outcome>,
}

fn rounded_gaussian(mean: f64, sd: f64, rng: &mut Stream) -> u32 {
    let z: f64 = StandardNormal.sample(rng);
    let v = libm::round(mean + sd * z);
    if v < 1.0 {
        1
    } else {
        v as u32
    }
}

pub fn classify_course(viral_load: f64, params: &DiseaseParams, rng: &mut Stream) -> Courseplan {
    let symptomatic = viral_load >= params.symptomatic_threshold;
    let peak = params.incubation_days + rounded_gaussian(params.peak_mean_days, params.peak_sd_days, rng);
    let resolution = peak + rounded_gaussian(params.recovery_mean_days, params.recovery_sd_days, rng);
    Courseplan {
        symptomatic,
        onset_offset: symptomatic.then_some(params.incubation_days),
        peak_day_offset: peak,
        recovery_or_death_day_offset: resolution,
        outcome: if symptomatic { None } else { Some(Outcome::Recovers) },
    }
}

/// `1 - exp(-rate * duration / distance²)`.
pub fn exposure_probability(distance_m: f64, duration_h: f64, rate: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::NonPositiveDistance(distance_m));
    }
    let dose = rate * duration_h / (distance_m * distance_m);
    Ok(-libm::expm1(-dose))
}

/// Probability that one contact transmits, with the inter-person distance
/// stretched by `sd_factor`.
pub fn transmission_probability(
    distance_m: f64,
    duration_h: f64,
    sd_factor: f64,
    params: &DiseaseParams,
) -> Result<f64> {
    if !(sd_factor > 0.0) {
        return Err(Error::config(format!("sd_factor = {sd_factor} must be positive")));
    }
    exposure_probability(sd_factor * distance_m, duration_h, params.base_transmission_rate)
}

pub fn resolve_outcome(age_group: u8, comorbidity: bool, params: &DiseaseParams, rng: &mut Stream) -> Result<Outcome> {
    let p = params.death.get(age_group, comorbidity)?;
    Ok(if rng.bernoulli(p) { Outcome::Dies } else { Outcome::Recovers })
}

/// Moves an agent's virus state along its plan. Mobility is left to the
/// caller. Healthy, recovered and dead agents are returned unchanged.
pub fn advance_agent(state: DiseaseState, plan: Option<&Courseplan>, today: Day) -> DiseaseState {
    let (Some(infected_on), Some(plan)) = (state.infected_on, plan) else {
        return state;
    };
    if !state.virus.is_infected() {
        return state;
    }
    let elapsed = today.saturating_sub(infected_on);
    let mut next = state;
    if elapsed >= plan.recovery_or_death_day_offset {
        next.virus = match plan.outcome {
            Some(Outcome::Dies) => VirusState::Dead,
            _ => VirusState::Recovered,
        };
        next.infected_on = None;
        next.viral_load = None;
    } else if plan.onset_offset.is_some_and(|onset| elapsed >= onset) {
        next.virus = VirusState::InfectedSymptomatic;
    } else {
        next.virus = VirusState::InfectedAsymptomatic;
    }
    next
}
