//! Scenario execution, output files and series comparison.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use citysim_core::calibration::{rmse, within_tolerance_days};
use citysim_core::engine::{run, SimConfig, SimOutput};
use citysim_core::population::Population;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::io::{self, CitySeries, ErrorMetrics, ObservedSeries, Summary};

pub const DAILY_CSV: &str = "daily.csv";
pub const REPLICATES_CSV: &str = "replicates.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const EVENTS_JSONL: &str = "events.jsonl";
pub const SCENARIO_TOML: &str = "scenario.toml";

/// A compiled scenario ready to run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: ScenarioConfig,
    pub sim: SimConfig,
    pub population: Arc<Population>,
}

pub fn prepare(scenario: ScenarioConfig, origin: &Path) -> Result<Prepared> {
    let population = scenario.build_population()?;
    prepare_with(scenario, population, origin)
}

pub fn prepare_with(scenario: ScenarioConfig, population: Arc<Population>, origin: &Path) -> Result<Prepared> {
    let sim = scenario.sim_config(&population, origin)?;
    Ok(Prepared { scenario, sim, population })
}

impl Prepared {
    pub fn run(&self) -> Result<SimOutput> {
        Ok(run(&self.sim, &self.population)?)
    }

    pub fn summary(&self, out: &SimOutput) -> Summary {
        io::summarize(&self.scenario.name, self.population.len(), self.scenario.scale(), out, self.scenario.dates())
    }

    /// Error metrics of the mean positives against an observed series.
    pub fn score(&self, out: &SimOutput, observed: &ObservedSeries, tol: f64, path: &Path) -> Result<ErrorMetrics> {
        let obs = observed.window(self.scenario.start_date, self.scenario.end_date, path)?;
        let sim = out.mean_series(|c| c.positives);
        let (within_days, within_fraction) = within_tolerance_days(&sim, &obs, tol)?;
        Ok(ErrorMetrics { tolerance: tol, within_days, within_fraction, rmse: rmse(&sim, &obs)? })
    }

    /// Writes the daily, replicate and summary files (and events when
    /// recorded) into `dir`, returning the summary.
    pub fn write_outputs(&self, dir: &Path, out: &SimOutput, error: Option<ErrorMetrics>) -> Result<Summary> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let dates = self.scenario.dates();
        let path = dir.join(DAILY_CSV);
        io::write_daily_csv(io::create(&path)?, &out.mean, dates, &path)?;
        let path = dir.join(REPLICATES_CSV);
        io::write_replicates_csv(io::create(&path)?, &out.replicates, dates, &path)?;
        if self.sim.record_events {
            let path = dir.join(EVENTS_JSONL);
            io::write_events(io::create(&path)?, &out.replicates, &path)?;
        }
        self.scenario.save(&dir.join(SCENARIO_TOML))?;
        let mut summary = self.summary(out);
        summary.error = error;
        let path = dir.join(SUMMARY_JSON);
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::io(&path, e.into()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(summary)
    }
}

/// Day-by-day comparison of two city series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: PathBuf,
    pub b: PathBuf,
    pub column: String,
    pub tolerance: f64,
    pub days: usize,
    /// Days where `|a - b| <= tol * max(b, 1)`.
    pub within_days: usize,
    pub within_fraction: f64,
    pub rmse: f64,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub day: u32,
    pub date: String,
    pub a: f64,
    pub b: f64,
    pub difference: f64,
    pub within: bool,
}

/// Compares `a` against `b`, with `b` as the reference.
pub fn compare_series(a: &CitySeries, b: &CitySeries, tol: f64, column: &str, paths: (&Path, &Path)) -> Result<Comparison> {
    if a.days != b.days {
        return Err(Error::schema(paths.1, format!("day ranges differ: {} days vs {} days", a.days.len(), b.days.len())));
    }
    let (within_days, within_fraction) = within_tolerance_days(&a.values, &b.values, tol)?;
    let rows = (0..a.values.len())
        .map(|i| {
            let (x, y) = (a.values[i], b.values[i]);
            ComparisonRow {
                day: a.days[i],
                date: a.dates[i].clone(),
                a: x,
                b: y,
                difference: x - y,
                within: within_tolerance_days(&[x], &[y], tol).map(|r| r.0 == 1).unwrap_or(false),
            }
        })
        .collect();
    Ok(Comparison {
        a: paths.0.to_path_buf(),
        b: paths.1.to_path_buf(),
        column: column.to_string(),
        tolerance: tol,
        days: a.values.len(),
        within_days,
        within_fraction,
        rmse: rmse(&a.values, &b.values)?,
        rows,
    })
}

pub fn compare_files(a: &Path, b: &Path, tol: f64, column: &str) -> Result<Comparison> {
    let sa = io::read_city_series(a, column)?;
    let sb = io::read_city_series(b, column)?;
    compare_series(&sa, &sb, tol, column, (a, b))
}

pub fn write_comparison_csv(path: &Path, c: &Comparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    let err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["day", "date", "a", "b", "difference", "within"]).map_err(err)?;
    for r in &c.rows {
        w.serialize((r.day, &r.date, r.a, r.b, r.difference, r.within)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
