//! Scenario files: a versioned TOML schema that compiles to a core
//! [`SimConfig`] plus the population it runs on.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use citysim_core::calendar::{DaySettings, LevelField, PolicyBlock, PolicyCalendar, SettingsPatch};
use citysim_core::disease::DiseaseParams;
use citysim_core::engine::{SimConfig, Warmup};
use citysim_core::mobility::MobilityParams;
use citysim_core::policy::PolicyParams;
use citysim_core::population::{synthesize_population, uniformize, Population, PopulationConfig, SectorTable, WardTable};
use serde::{Deserialize, Serialize};

use crate::data::{resolve_data_path, KOLKATA_SECTORS, KOLKATA_WARDS};
use crate::error::{Error, Result};
use crate::io::{self, DateAxis};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    /// The bundled Kolkata ward and sector tables.
    #[default]
    Kolkata,
    /// Ward and sector CSV files named by `wards` and `sectors`.
    Tables,
    /// A previously generated population file.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    #[serde(default)]
    pub source: PopulationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wards: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sectors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Spread residents evenly over wards.
    #[serde(default)]
    pub uniform_wards: bool,
    #[serde(default = "default_population_seed")]
    pub seed: u64,
    #[serde(default)]
    pub params: PopulationConfig,
}

fn default_population_seed() -> u64 {
    1
}

impl Default for PopulationSection {
    fn default() -> Self {
        PopulationSection {
            source: PopulationSource::Kolkata,
            wards: None,
            sectors: None,
            file: None,
            uniform_wards: false,
            seed: default_population_seed(),
            params: PopulationConfig::default(),
        }
    }
}

/// Settings that apply from `from` to `to`, both inclusive. Without `to`
/// the block runs to the end of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateBlock {
    pub from: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<NaiveDate>,
    pub set: SettingsPatch,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalendarSection {
    #[serde(default)]
    pub base: DaySettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<DateBlock>,
}

/// Reverse-seeding search. Counts are at full census scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupSection {
    pub start_date: NaiveDate,
    pub target_positive: u32,
    #[serde(default = "default_candidates")]
    pub candidates: u32,
    #[serde(default = "default_infection_counts")]
    pub infection_counts: Vec<u32>,
    #[serde(default = "default_warmup_tolerance")]
    pub tolerance: f64,
}

fn default_candidates() -> u32 {
    4
}

fn default_infection_counts() -> Vec<u32> {
    vec![10, 20, 50, 100, 200]
}

fn default_warmup_tolerance() -> f64 {
    0.1
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub start_date: NaiveDate,
    /// Last simulated day, inclusive.
    pub end_date: NaiveDate,
    /// Day 0 of the policy calendar. Defaults to the earliest of the start
    /// date, the warmup start and the first block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar_origin: Option<NaiveDate>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// At full census scale; scaled with the population.
    #[serde(default)]
    pub initial_infections: u32,
    #[serde(default)]
    pub record_events: bool,
    #[serde(default)]
    pub population: PopulationSection,
    #[serde(default)]
    pub disease: DiseaseParams,
    #[serde(default)]
    pub mobility: MobilityParams,
    #[serde(default)]
    pub policy: PolicyParams,
    #[serde(default)]
    pub calendar: CalendarSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<WarmupSection>,
}

/// Scales a full-census count, keeping non-zero counts at least 1.
pub fn scale_count(n: u32, scale: f64) -> u32 {
    if n == 0 {
        0
    } else {
        ((n as f64 * scale).round() as u32).max(1)
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1) as u64);
            match line {
                Some(line) => Error::parse(path, line, e.message().to_string()),
                None => Error::schema(path, e.message().to_string()),
            }
        })?;
        if cfg.version != SCHEMA_VERSION {
            return Err(Error::schema(path, format!("unsupported version {}; expected {SCHEMA_VERSION}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        // Table paths are relative to the scenario file.
        if let Some(dir) = path.parent() {
            let p = &mut cfg.population;
            for slot in [&mut p.wards, &mut p.sectors, &mut p.file] {
                if let Some(f) = slot.as_mut() {
                    if f.is_relative() && dir.join(&*f).exists() {
                        *f = dir.join(&*f);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Makes `field` constant at `value` on every day, clearing block
    /// overrides but keeping the block list so block indices stay valid.
    pub fn set_level_everywhere(&mut self, field: LevelField, value: f64) {
        for b in &mut self.calendar.blocks {
            *b.set.level_mut(field) = None;
        }
        let base = &mut self.calendar.base;
        match field {
            LevelField::ComplianceRate => base.compliance_rate = value,
            LevelField::ExternalIfp => base.external_ifp = value,
            LevelField::TransportFraction => base.transport_fraction = value,
            LevelField::SdFactor => base.sd_factor = value,
            LevelField::TracingWorkplace => base.tracing_efficacy_workplace = value,
            LevelField::TracingTransport => base.tracing_efficacy_transport = value,
            LevelField::TestCapacity => base.test_capacity = value.round().max(0.0) as u32,
        }
    }

    pub fn scale(&self) -> f64 {
        self.population.params.scale
    }

    pub fn origin(&self) -> NaiveDate {
        self.calendar_origin.unwrap_or_else(|| {
            let mut o = self.start_date;
            if let Some(w) = &self.warmup {
                o = o.min(w.start_date);
            }
            self.calendar.blocks.iter().map(|b| b.from).fold(o, NaiveDate::min)
        })
    }

    pub fn dates(&self) -> DateAxis {
        DateAxis { origin: self.origin() }
    }

    fn day_of(&self, date: NaiveDate, what: &str) -> std::result::Result<u32, String> {
        let d = (date - self.origin()).num_days();
        u32::try_from(d).map_err(|_| format!("{what} {date} is before the calendar origin {}", self.origin()))
    }

    /// Resolves dates to day indices and scales counts to the population.
    pub fn compile(&self) -> std::result::Result<SimConfig, String> {
        if self.end_date < self.start_date {
            return Err(format!("end_date {} is before start_date {}", self.end_date, self.start_date));
        }
        let start_day = self.day_of(self.start_date, "start_date")?;
        let end_day = self.day_of(self.end_date, "end_date")?;
        let mut blocks = Vec::with_capacity(self.calendar.blocks.len());
        for (i, b) in self.calendar.blocks.iter().enumerate() {
            let first_day = self.day_of(b.from, &format!("calendar block {i} start"))?;
            let last_day = match b.to {
                Some(to) if to < b.from => return Err(format!("calendar block {i} ends before it starts")),
                Some(to) => self.day_of(to, "calendar block end")?,
                None => end_day,
            };
            blocks.push(PolicyBlock { first_day, last_day, patch: b.set.clone() });
        }
        let scale = self.scale();
        let mut calendar = PolicyCalendar { days: end_day + 1, base: self.calendar.base.clone(), blocks };
        calendar.scale_test_capacity(scale);
        let warmup = match &self.warmup {
            Some(w) => Some(Warmup {
                start_day: self.day_of(w.start_date, "warmup start_date")?,
                target_positive: scale_count(w.target_positive, scale),
                infection_counts: w.infection_counts.iter().map(|&n| scale_count(n, scale)).collect(),
                candidates: w.candidates,
                tolerance: w.tolerance,
            }),
            None => None,
        };
        Ok(SimConfig {
            disease: self.disease.clone(),
            mobility: self.mobility.clone(),
            policy: self.policy.clone(),
            calendar,
            start_day,
            days: end_day - start_day + 1,
            initial_infections: scale_count(self.initial_infections, scale),
            seeds: self.seeds.clone(),
            record_events: self.record_events,
            warmup,
        })
    }

    /// Compiles and validates against `pop`, naming `origin` in errors.
    pub fn sim_config(&self, pop: &Population, origin: &Path) -> Result<SimConfig> {
        let cfg = self.compile().map_err(|m| Error::schema(origin, m))?;
        self.population.params.validate().map_err(|e| Error::schema(origin, e.to_string()))?;
        cfg.validate(pop).map_err(|e| Error::schema(origin, e.to_string()))?;
        Ok(cfg)
    }

    pub fn ward_table(&self) -> Result<WardTable> {
        let table = match self.population.source {
            PopulationSource::Kolkata => io::parse_ward_table(KOLKATA_WARDS.as_bytes(), Path::new("<bundled kolkata_wards.csv>"))?,
            PopulationSource::Tables => {
                let p = self.population.wards.as_ref().ok_or_else(|| Error::schema("<scenario>", "population.wards is required for source = \"tables\""))?;
                io::load_ward_table(&resolve_data_path(p))?
            }
            PopulationSource::File => return Err(Error::schema("<scenario>", "a population file carries its own wards")),
        };
        Ok(if self.population.uniform_wards { uniformize(&table) } else { table })
    }

    pub fn sector_table(&self) -> Result<SectorTable> {
        match self.population.source {
            PopulationSource::Kolkata => io::parse_sector_table(KOLKATA_SECTORS.as_bytes(), Path::new("<bundled kolkata_sectors.csv>")),
            PopulationSource::Tables => match &self.population.sectors {
                Some(p) => io::load_sector_table(&resolve_data_path(p)),
                None => Ok(SectorTable::empty()),
            },
            PopulationSource::File => Err(Error::schema("<scenario>", "a population file carries its own sectors")),
        }
    }

    /// Generates or loads the population this scenario runs on.
    pub fn build_population(&self) -> Result<Arc<Population>> {
        let pop = match self.population.source {
            PopulationSource::File => {
                let p = self.population.file.as_ref().ok_or_else(|| Error::schema("<scenario>", "population.file is required for source = \"file\""))?;
                io::load_population(&resolve_data_path(p))?
            }
            _ => synthesize_population(&self.ward_table()?, &self.sector_table()?, &self.population.params, self.population.seed)?,
        };
        Ok(Arc::new(pop))
    }
}
