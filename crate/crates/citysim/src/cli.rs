//! Command-line interface.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::calibrate::{calibrate, write_ranked_csv, GridFile};
use crate::config::{PopulationSource, ScenarioConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::presets;
use crate::run::{self, prepare_with};

#[derive(Debug, Parser)]
#[command(name = "citysim", version, about = "Ward-level agent-based epidemic simulator")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population and write it to a file.
    Synth(SynthArgs),
    /// Simulate a scenario.
    Run(RunArgs),
    /// Grid-search parameters against an observed series.
    Calibrate(CalibrateArgs),
    /// Compare the city series of two daily output files.
    Compare(CompareArgs),
    /// List the built-in presets, or print one as a scenario file.
    Presets(PresetsArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario name; see `citysim presets`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Fraction of the census population to simulate.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Spread residents evenly over wards.
    #[arg(long)]
    pub uniform_wards: bool,
    /// Ward table (CSV) replacing the scenario's population source.
    #[arg(long)]
    pub wards: Option<PathBuf>,
    /// Sector table (CSV); used with --wards.
    #[arg(long, requires = "wards")]
    pub sectors: Option<PathBuf>,
}

impl ScenarioArgs {
    /// The scenario and the path that names it in diagnostics.
    pub fn load(&self) -> Result<(ScenarioConfig, PathBuf)> {
        let (mut s, origin) = match (&self.config, &self.preset) {
            (Some(p), _) => (ScenarioConfig::load(p)?, p.clone()),
            (None, Some(name)) => (presets::preset(name)?, PathBuf::from(format!("<preset {name}>"))),
            (None, None) => (presets::kolkata_2020(), PathBuf::from("<preset kolkata-2020>")),
        };
        if let Some(scale) = self.scale {
            s.population.params.scale = scale;
        }
        if self.uniform_wards {
            s.population.uniform_wards = true;
        }
        if let Some(w) = &self.wards {
            s.population.source = PopulationSource::Tables;
            s.population.wards = Some(w.clone());
            s.population.sectors = self.sectors.clone();
        }
        s.population.params.validate().map_err(|e| Error::schema(&origin, e.to_string()))?;
        Ok((s, origin))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Population seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output population file.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Population file from `citysim synth`, used instead of generating one.
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Number of replicates; seeds run from --seed upwards.
    #[arg(long)]
    pub seeds: Option<u32>,
    /// First replicate seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, short, default_value = "citysim-out")]
    pub out: PathBuf,
    /// Record the infection event trace.
    #[arg(long)]
    pub events: bool,
    /// Observed `date,count` series to score the mean positives against.
    #[arg(long)]
    pub observed: Option<PathBuf>,
    /// Relative tolerance for the observed-series score.
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
    /// Start from the reverse-seeding warmup instead of fixed seeds.
    #[arg(long)]
    pub reverse_seed: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Grid file (TOML) with `[[axes]]` tables.
    #[arg(long)]
    pub grid: PathBuf,
    /// Observed `date,count` series.
    #[arg(long)]
    pub observed: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub replicates: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
    /// Output directory for ranked.csv and best.toml.
    #[arg(long, short, default_value = "citysim-calibration")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PresetsArgs {
    /// Print this preset as TOML instead of listing names.
    #[arg(long)]
    pub show: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Daily output file under test.
    pub a: PathBuf,
    /// Reference daily output file.
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
    /// Output column to compare.
    #[arg(long, default_value = "positives")]
    pub column: String,
    /// Per-day comparison CSV.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn population_for(scenario: &ScenarioConfig, file: Option<&Path>) -> Result<Arc<citysim_core::population::Population>> {
    match file {
        Some(p) => Ok(Arc::new(io::load_population(p)?)),
        None => scenario.build_population(),
    }
}

fn do_synth(a: &SynthArgs) -> Result<()> {
    let (mut s, _) = a.scenario.load()?;
    if let Some(seed) = a.seed {
        s.population.seed = seed;
    }
    let pop = s.build_population()?;
    io::save_population(&a.out, &pop)?;
    println!("wrote {} agents in {} families to {}", pop.len(), pop.families.len(), a.out.display());
    Ok(())
}

fn do_run(a: &RunArgs) -> Result<()> {
    let (mut s, origin) = a.scenario.load()?;
    if let Some(n) = a.seeds {
        if n == 0 {
            return Err(Error::schema(&origin, "--seeds must be at least 1"));
        }
        s.seeds = (0..n as u64).map(|i| a.seed + i).collect();
    }
    s.record_events |= a.events;
    if a.reverse_seed && s.warmup.is_none() {
        s.warmup = Some(presets::kolkata_warmup());
    }
    let pop = population_for(&s, a.population.as_deref())?;
    let prepared = prepare_with(s, pop, &origin)?;
    let out = prepared.run()?;
    let error = match &a.observed {
        Some(p) => Some(prepared.score(&out, &io::load_observed(p)?, a.tol, p)?),
        None => None,
    };
    let summary = prepared.write_outputs(&a.out, &out, error)?;
    println!(
        "{}: {} agents, {} replicate(s), {:.1} cumulative infections (mean), peak {:.1} on {}; outputs in {}",
        summary.scenario,
        summary.agents,
        summary.replicates,
        summary.cumulative.infections,
        summary.peak_daily_cases,
        summary.peak_date.map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
        a.out.display()
    );
    if let Some(e) = &summary.error {
        println!("within {:.0}% on {} of {} days, rmse {:.3}", e.tolerance * 100.0, e.within_days, out.mean.len(), e.rmse);
    }
    Ok(())
}

fn do_calibrate(a: &CalibrateArgs) -> Result<()> {
    let (s, origin) = a.scenario.load()?;
    let grid = GridFile::load(&a.grid)?;
    let observed = io::load_observed(&a.observed)?;
    let pop = population_for(&s, a.population.as_deref())?;
    let prepared = prepare_with(s, pop, &origin)?;
    let count: usize = grid.axes.iter().map(|x| x.values.len()).product();
    eprintln!("calibrating {count} combination(s) x {} replicate(s)", a.replicates);
    let cal = calibrate(&grid, &prepared, &observed, &a.observed, a.replicates, a.seed, a.tol)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_ranked_csv(&a.out.join("ranked.csv"), &cal.results)?;
    cal.best.save(&a.out.join("best.toml"))?;
    let best = &cal.results[0];
    println!("best {}: within {} days ({:.3}), rmse {:.3}", best.key, best.within_days, best.within_fraction, best.rmse);
    Ok(())
}

fn do_compare(a: &CompareArgs) -> Result<()> {
    let c = run::compare_files(&a.a, &a.b, a.tol, &a.column)?;
    if let Some(out) = &a.out {
        run::write_comparison_csv(out, &c)?;
    }
    println!(
        "{}: {} of {} days within {:.0}% (fraction {:.4}), rmse {:.4}",
        c.column,
        c.within_days,
        c.days,
        c.tolerance * 100.0,
        c.within_fraction,
        c.rmse
    );
    Ok(())
}

fn do_presets(a: &PresetsArgs) -> Result<()> {
    match &a.show {
        Some(name) => print!("{}", presets::preset(name)?.to_toml()),
        None => {
            for (name, about) in presets::catalog() {
                println!("{name:<24} {about}");
            }
        }
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // Ignore a second initialization in the same process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Synth(a) => do_synth(a),
        Command::Run(a) => do_run(a),
        Command::Calibrate(a) => do_calibrate(a),
        Command::Compare(a) => do_compare(a),
        Command::Presets(a) => do_presets(a),
    }
}
