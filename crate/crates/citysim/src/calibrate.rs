//! Grid-search calibration against an observed daily series.

use std::path::Path;

use citysim_core::calendar::{Level, LevelField};
use citysim_core::calibration::{combination_key, grid_search, sort_results, Axis, GridResult, ParamGrid};
use serde::{Deserialize, Serialize};

use crate::config::{scale_count, ScenarioConfig};
use crate::error::{Error, Result};
use crate::io::{self, ObservedSeries};
use crate::run::Prepared;

/// A grid file: `[[axes]]` tables with `name` and `values`. Counts for
/// `initial_infections` are at full census scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub axes: Vec<Axis>,
}

impl GridFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: GridFile = toml::from_str(&text).map_err(|e| Error::schema(path, e.message().to_string()))?;
        ParamGrid { axes: g.axes.clone() }.validate().map_err(|e| Error::schema(path, e.to_string()))?;
        Ok(g)
    }
}

/// Sets one grid axis on a scenario, the way the core applies it to a
/// compiled configuration.
pub fn apply_to_scenario(s: &mut ScenarioConfig, name: &str, value: f64) -> std::result::Result<(), String> {
    let (field, block) = match name.split_once('@') {
        Some((f, b)) => (f, Some(b.parse::<usize>().map_err(|_| format!("bad block index in {name:?}"))?)),
        None => (name, None),
    };
    match (field, block) {
        ("beta", None) => s.disease.base_transmission_rate = value,
        ("initial_infections", None) => s.initial_infections = value.round().max(0.0) as u32,
        _ => {
            let f = LevelField::parse(field).ok_or_else(|| format!("unknown grid axis {name:?}"))?;
            match block {
                Some(k) => {
                    let b = s.calendar.blocks.get_mut(k).ok_or_else(|| format!("calendar has no block {k}"))?;
                    *b.set.level_mut(f) = Some(Level::Const(value));
                }
                None => s.set_level_everywhere(f, value),
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub results: Vec<GridResult>,
    pub best: ScenarioConfig,
}

/// Runs the grid and returns results best first with the winning scenario.
pub fn calibrate(
    grid: &GridFile,
    prepared: &Prepared,
    observed: &ObservedSeries,
    observed_path: &Path,
    replicates: u32,
    seed: u64,
    tol: f64,
) -> Result<Calibration> {
    let scale = prepared.scenario.scale();
    let scaled = ParamGrid {
        axes: grid
            .axes
            .iter()
            .map(|a| Axis {
                name: a.name.clone(),
                values: if a.name == "initial_infections" {
                    a.values.iter().map(|&v| scale_count(v.round().max(0.0) as u32, scale) as f64).collect()
                } else {
                    a.values.clone()
                },
            })
            .collect(),
    };
    let original = ParamGrid { axes: grid.axes.clone() }.combinations();
    let transformed = scaled.combinations();
    let obs = observed.window(prepared.scenario.start_date, prepared.scenario.end_date, observed_path)?;
    let mut results = grid_search(&scaled, &prepared.sim, &prepared.population, &obs, replicates, seed, tol)?;
    let mut used = vec![false; transformed.len()];
    for r in &mut results {
        let i = (0..transformed.len()).find(|&i| !used[i] && transformed[i] == r.combination).expect("every result comes from the grid");
        used[i] = true;
        r.combination = original[i].clone();
        r.key = combination_key(&r.combination);
    }
    sort_results(&mut results);
    let mut best = prepared.scenario.clone();
    for (name, v) in &results[0].combination {
        apply_to_scenario(&mut best, name, *v).map_err(|m| Error::schema("<grid>", m))?;
    }
    best.seeds = citysim_core::calibration::replicate_seeds(seed, replicates);
    Ok(Calibration { results, best })
}

pub fn write_ranked_csv(path: &Path, results: &[GridResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    let err = |e: csv::Error| Error::io(path, e.into());
    let mut header = vec!["rank".to_string(), "key".to_string()];
    if let Some(first) = results.first() {
        header.extend(first.combination.iter().map(|(n, _)| n.clone()));
    }
    header.extend(["within_days", "within_fraction", "rmse"].map(String::from));
    w.write_record(&header).map_err(err)?;
    for (i, r) in results.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string(), r.key.clone()];
        rec.extend(r.combination.iter().map(|(_, v)| v.to_string()));
        rec.extend([r.within_days.to_string(), r.within_fraction.to_string(), r.rmse.to_string()]);
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
