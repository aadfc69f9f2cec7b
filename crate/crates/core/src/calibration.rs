//! Error metrics against an observed case series and grid-search fitting.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calendar::LevelField;
use crate::engine::{mean_stats, run_replicate, SimConfig};
use crate::par;
use crate::population::Population;
use crate::rng::{label, StreamKey};
use crate::{Error, Result};

fn check_lengths(sim: &[f64], obs: &[f64]) -> Result<()> {
    if sim.len() != obs.len() {
        return Err(Error::LengthMismatch { simulated: sim.len(), observed: obs.len() });
    }
    Ok(())
}

/// Days where `|sim - obs| <= tol * max(obs, 1)`, as a count and a fraction
/// of the series length. An empty series scores a fraction of 1.
pub fn within_tolerance_days(sim: &[f64], obs: &[f64], tol: f64) -> Result<(usize, f64)> {
    check_lengths(sim, obs)?;
    if !(tol > 0.0) {
        return Err(Error::config("tolerance must be positive"));
    }
    let count = sim
        .iter()
        .zip(obs)
        .filter(|&(&s, &o)| {
            let bound = tol * o.max(1.0);
            // Absorb rounding in bounds like 110 vs 100 at 10%.
            (s - o).abs() <= bound * (1.0 + 1e-12)
        })
        .count();
    let frac = if sim.is_empty() { 1.0 } else { count as f64 / sim.len() as f64 };
    Ok((count, frac))
}

pub fn rmse(sim: &[f64], obs: &[f64]) -> Result<f64> {
    check_lengths(sim, obs)?;
    if sim.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = sim.iter().zip(obs).map(|(s, o)| (s - o) * (s - o)).sum();
    Ok(libm::sqrt(ss / sim.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// `beta`, `initial_infections`, a calendar level name such as
    /// `compliance_rate`, or `name@k` to touch calendar block `k` only.
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub axes: Vec<Axis>,
}

impl ParamGrid {
    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::config("grid has no axes"));
        }
        for a in &self.axes {
            if a.values.is_empty() {
                return Err(Error::config(format!("grid axis {} has no values", a.name)));
            }
            parse_axis(&a.name)?;
        }
        Ok(())
    }

    pub fn combinations_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// All combinations in row-major order (last axis fastest).
    pub fn combinations(&self) -> Vec<Vec<(String, f64)>> {
        let mut out: Vec<Vec<(String, f64)>> = alloc::vec![Vec::new()];
        for a in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    a.values.iter().map(move |&v| {
                        let mut c = prefix.clone();
                        c.push((a.name.clone(), v));
                        c
                    })
                })
                .collect();
        }
        out
    }
}

enum Target {
    Beta,
    InitialInfections,
    Level(LevelField, Option<usize>),
}

fn parse_axis(name: &str) -> Result<Target> {
    let (field, block) = match name.split_once('@') {
        Some((f, b)) => (f, Some(b.parse::<usize>().map_err(|_| Error::UnknownAxis(name.into()))?)),
        None => (name, None),
    };
    match (field, block) {
        ("beta", None) => Ok(Target::Beta),
        ("initial_infections", None) => Ok(Target::InitialInfections),
        _ => LevelField::parse(field).map(|f| Target::Level(f, block)).ok_or_else(|| Error::UnknownAxis(name.into())),
    }
}

/// Sets one grid axis on a configuration.
pub fn apply_axis(cfg: &mut SimConfig, name: &str, value: f64) -> Result<()> {
    match parse_axis(name)? {
        Target::Beta => cfg.disease.base_transmission_rate = value,
        Target::InitialInfections => cfg.initial_infections = libm::round(value).max(0.0) as u32,
        Target::Level(f, None) => cfg.calendar.set_everywhere(f, value),
        Target::Level(f, Some(k)) => cfg.calendar.set_in_block(k, f, value)?,
    }
    Ok(())
}

pub fn combination_key(combo: &[(String, f64)]) -> String {
    let parts: Vec<String> = combo.iter().map(|(n, v)| format!("{n}={v}")).collect();
    parts.join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub combination: Vec<(String, f64)>,
    pub key: String,
    pub within_days: usize,
    pub within_fraction: f64,
    pub rmse: f64,
    pub mean_positives: Vec<f64>,
}

/// Replicate seeds shared by every combination, so that differences in
/// score come from the parameters rather than the noise.
pub fn replicate_seeds(seed: u64, replicates: u32) -> Vec<u64> {
    (0..replicates as u64).map(|r| StreamKey::root(seed).path(&[label::REPLICATE, r]).raw()).collect()
}

/// Scores every combination on its mean daily positives and returns the
/// results best first: most days within `tol`, then lowest RMSE, then key.
pub fn grid_search(
    grid: &ParamGrid,
    base: &SimConfig,
    pop: &Arc<Population>,
    observed: &[f64],
    replicates: u32,
    seed: u64,
    tol: f64,
) -> Result<Vec<GridResult>> {
    grid.validate()?;
    if replicates == 0 {
        return Err(Error::config("replicates must be at least 1"));
    }
    if observed.len() != base.days as usize {
        return Err(Error::LengthMismatch { simulated: base.days as usize, observed: observed.len() });
    }
    let combos = grid.combinations();
    let seeds = replicate_seeds(seed, replicates);
    let mut configs = Vec::with_capacity(combos.len());
    for c in &combos {
        let mut cfg = base.clone();
        for (name, v) in c {
            apply_axis(&mut cfg, name, *v)?;
        }
        cfg.seeds = seeds.clone();
        cfg.record_events = false;
        cfg.validate(pop)?;
        configs.push(cfg);
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let reps = par::map_coarse(jobs.len(), |j| run_replicate(&configs[jobs[j].0], pop, jobs[j].1));
    let mut reps = reps.into_iter();
    let mut results = Vec::with_capacity(combos.len());
    for combo in combos {
        let mine: Vec<_> = reps.by_ref().take(seeds.len()).collect::<Result<_>>()?;
        let mean: Vec<f64> = mean_stats(&mine).iter().map(|m| m.city.positives).collect();
        let (within_days, within_fraction) = within_tolerance_days(&mean, observed, tol)?;
        results.push(GridResult {
            key: combination_key(&combo),
            combination: combo,
            within_days,
            within_fraction,
            rmse: rmse(&mean, observed)?,
            mean_positives: mean,
        });
    }
    sort_results(&mut results);
    Ok(results)
}

pub fn sort_results(results: &mut [GridResult]) {
    results.sort_by(|a, b| {
        b.within_days
            .cmp(&a.within_days)
            .then(a.rmse.total_cmp(&b.rmse))
            .then_with(|| a.key.cmp(&b.key))
    });
}
