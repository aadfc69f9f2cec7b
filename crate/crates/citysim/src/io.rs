//! File formats: input tables, the line-delimited persistence format for
//! populations and states, and simulation outputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use citysim_core::disease::Courseplan;
use citysim_core::engine::{Counts, InfectionEvent, MeanStats, SimState, WarmupReport};
use citysim_core::population::{Population, SectorRow, SectorTable, WardRow, WardTable};
use citysim_core::{Agent, AgentId, Day, DiseaseState, FamilyId, HealthcareFacility, Ward, WardId, Workplace};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POPULATION_FORMAT: &str = "citysim-population";
pub const STATE_FORMAT: &str = "citysim-state";
pub const FORMAT_VERSION: u32 = 1;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn columns(path: &Path, headers: &csv::StringRecord, required: &[&str]) -> Result<()> {
    let missing: Vec<&str> = required.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(Error::schema(path, format!("missing column(s): {}", missing.join(", "))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, headers: &csv::StringRecord, name: &str) -> Result<Option<T>> {
    let line = rec.position().map_or(0, |p| p.line());
    let Some(i) = headers.iter().position(|h| h == name) else { return Ok(None) };
    let raw = rec.get(i).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| Error::parse(path, line, format!("column {name}: cannot parse {raw:?}")))
}

fn required<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, headers: &csv::StringRecord, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    field(path, rec, headers, name)?.ok_or_else(|| Error::parse(path, line, format!("column {name} is empty")))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r)
}

/// Reads `ward_id,population,density` (or `area` instead of `density`).
pub fn parse_ward_table<R: Read>(reader: R, path: &Path) -> Result<WardTable> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::schema(path, e.to_string()))?.clone();
    columns(path, &headers, &["ward_id", "population"])?;
    if !headers.iter().any(|h| h == "density" || h == "area") {
        return Err(Error::schema(path, "missing column(s): density or area"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let id: u16 = required(path, &rec, &headers, "ward_id")?;
        rows.push(WardRow {
            id: WardId(id),
            population: required(path, &rec, &headers, "population")?,
            density: field(path, &rec, &headers, "density")?,
            area: field(path, &rec, &headers, "area")?,
        });
    }
    let table = WardTable { rows };
    table.validate().map_err(|e| Error::schema(path, e.to_string()))?;
    Ok(table)
}

pub fn load_ward_table(path: &Path) -> Result<WardTable> {
    parse_ward_table(open(path)?, path)
}

/// Reads `sector,workers,centers,hours,gap_m`; `centers` may list several
/// sub-sector counts separated by `;`.
pub fn parse_sector_table<R: Read>(reader: R, path: &Path) -> Result<SectorTable> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::schema(path, e.to_string()))?.clone();
    columns(path, &headers, &["sector", "workers", "centers", "hours", "gap_m"])?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let raw_centers: String = required(path, &rec, &headers, "centers")?;
        let centers = raw_centers
            .split(';')
            .map(|c| c.trim().parse::<u64>().map_err(|_| Error::parse(path, line, format!("column centers: cannot parse {raw_centers:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SectorRow {
            name: required(path, &rec, &headers, "sector")?,
            workers: required(path, &rec, &headers, "workers")?,
            centers,
            hours: required(path, &rec, &headers, "hours")?,
            gap_m: required(path, &rec, &headers, "gap_m")?,
        });
    }
    let table = SectorTable { rows };
    table.validate().map_err(|e| Error::schema(path, e.to_string()))?;
    Ok(table)
}

pub fn load_sector_table(path: &Path) -> Result<SectorTable> {
    parse_sector_table(open(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    day: Option<Day>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum PopulationRecord {
    Sector(citysim_core::types::Sector),
    Ward(Ward),
    Workplace(Workplace),
    Facility(HealthcareFacility),
    Family { id: FamilyId, ward: WardId, members: Vec<AgentId> },
    Agent(Agent),
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Writes a population as one JSON record per line after a header line.
pub fn write_population<W: Write>(mut w: W, pop: &Population, path: &Path) -> Result<()> {
    let header = Header { format: POPULATION_FORMAT.into(), version: FORMAT_VERSION, day: None, seed: None, agents: pop.len() };
    write_line(&mut w, &header, path)?;
    for s in &pop.sectors {
        write_line(&mut w, &PopulationRecord::Sector(s.clone()), path)?;
    }
    for ward in &pop.wards {
        write_line(&mut w, &PopulationRecord::Ward(ward.clone()), path)?;
    }
    for wp in &pop.workplaces {
        write_line(&mut w, &PopulationRecord::Workplace(wp.clone()), path)?;
    }
    for f in &pop.facilities {
        write_line(&mut w, &PopulationRecord::Facility(f.clone()), path)?;
    }
    for (i, members) in pop.families.iter().enumerate() {
        let rec = PopulationRecord::Family { id: FamilyId(i as u32), ward: pop.family_wards[i], members: members.clone() };
        write_line(&mut w, &rec, path)?;
    }
    for a in &pop.agents {
        write_line(&mut w, &PopulationRecord::Agent(a.clone()), path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_header<R: BufRead>(lines: &mut std::io::Lines<R>, path: &Path, format: &str) -> Result<Header> {
    let first = lines.next().ok_or_else(|| Error::schema(path, "empty file"))?.map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::parse(path, 1, format!("bad header: {e}")))?;
    if header.format != format {
        return Err(Error::parse(path, 1, format!("expected format {format:?}, found {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::parse(path, 1, format!("unsupported version {}", header.version)));
    }
    Ok(header)
}

fn expect_sequential(path: &Path, line: u64, what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::parse(path, line, format!("{what} id {got} out of order; expected {want}")));
    }
    Ok(())
}

pub fn read_population<R: BufRead>(reader: R, path: &Path) -> Result<Population> {
    let mut lines = reader.lines();
    let header = read_header(&mut lines, path, POPULATION_FORMAT)?;
    let mut pop = Population {
        agents: Vec::with_capacity(header.agents),
        families: Vec::new(),
        family_wards: Vec::new(),
        sectors: Vec::new(),
        wards: Vec::new(),
        workplaces: Vec::new(),
        facilities: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let n = i as u64 + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PopulationRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        match rec {
            PopulationRecord::Sector(s) => {
                expect_sequential(path, n, "sector", s.id.0 as usize, pop.sectors.len())?;
                pop.sectors.push(s);
            }
            PopulationRecord::Ward(w) => {
                expect_sequential(path, n, "ward", w.id.0 as usize, pop.wards.len() + 1)?;
                pop.wards.push(w);
            }
            PopulationRecord::Workplace(w) => {
                expect_sequential(path, n, "workplace", w.id.index(), pop.workplaces.len())?;
                pop.workplaces.push(w);
            }
            PopulationRecord::Facility(f) => {
                expect_sequential(path, n, "facility", f.id.index(), pop.facilities.len())?;
                pop.facilities.push(f);
            }
            PopulationRecord::Family { id, ward, members } => {
                expect_sequential(path, n, "family", id.index(), pop.families.len())?;
                pop.families.push(members);
                pop.family_wards.push(ward);
            }
            PopulationRecord::Agent(a) => {
                expect_sequential(path, n, "agent", a.id.index(), pop.agents.len())?;
                pop.agents.push(a);
            }
        }
    }
    if pop.agents.len() != header.agents {
        return Err(Error::schema(path, format!("header promises {} agents, file has {}", header.agents, pop.agents.len())));
    }
    pop.validate().map_err(|e| Error::schema(path, e.to_string()))?;
    Ok(pop)
}

pub fn load_population(path: &Path) -> Result<Population> {
    read_population(open(path)?, path)
}

pub fn save_population(path: &Path, pop: &Population) -> Result<()> {
    write_population(create(path)?, pop, path)
}

/// Per-agent simulation state as stored in a state file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub id: AgentId,
    pub state: DiseaseState,
    pub plan: Option<Courseplan>,
    /// Day the agent entered its current mobility state.
    pub since: Day,
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub day: Day,
    pub seed: u64,
    pub agents: Vec<AgentRecord>,
}

impl StateSnapshot {
    pub fn capture(state: &SimState) -> Self {
        let agents = (0..state.states.len())
            .map(|i| AgentRecord {
                id: AgentId(i as u32),
                state: state.states[i],
                plan: state.plans[i],
                since: state.mobility_since[i],
                confirmed: state.confirmed[i],
            })
            .collect();
        StateSnapshot { day: state.day, seed: state.seed, agents }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum StateRecord {
    Agent(AgentRecord),
}

pub fn write_state<W: Write>(mut w: W, snap: &StateSnapshot, path: &Path) -> Result<()> {
    let header =
        Header { format: STATE_FORMAT.into(), version: FORMAT_VERSION, day: Some(snap.day), seed: Some(snap.seed), agents: snap.agents.len() };
    write_line(&mut w, &header, path)?;
    for a in &snap.agents {
        write_line(&mut w, &StateRecord::Agent(a.clone()), path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_state<R: BufRead>(reader: R, path: &Path) -> Result<StateSnapshot> {
    let mut lines = reader.lines();
    let header = read_header(&mut lines, path, STATE_FORMAT)?;
    let mut agents = Vec::with_capacity(header.agents);
    for (i, line) in lines.enumerate() {
        let n = i as u64 + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let StateRecord::Agent(a) = serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e.to_string()))?;
        expect_sequential(path, n, "agent", a.id.index(), agents.len())?;
        a.state.validate().map_err(|e| Error::parse(path, n, e.to_string()))?;
        agents.push(a);
    }
    if agents.len() != header.agents {
        return Err(Error::schema(path, format!("header promises {} agents, file has {}", header.agents, agents.len())));
    }
    Ok(StateSnapshot { day: header.day.unwrap_or(0), seed: header.seed.unwrap_or(0), agents })
}

pub const OUTPUT_COLUMNS: [&str; 8] = ["new_infections", "positives", "active", "recovered", "deaths", "tests", "traced", "hospitalized"];

/// Maps calendar day indices to dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateAxis {
    pub origin: NaiveDate,
}

impl DateAxis {
    pub fn date(&self, day: Day) -> NaiveDate {
        self.origin + chrono::Days::new(day as u64)
    }
}

fn fmt_value(v: f64) -> String {
    // Shortest round-trip form; integers print without a fraction.
    format!("{v}")
}

/// Writes the mean series: one row per day and ward, then a `city` row.
pub fn write_daily_csv<W: Write>(w: W, mean: &[MeanStats], dates: DateAxis, path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::io(path, e.into());
    let mut header = vec!["day", "date", "ward"];
    header.extend(OUTPUT_COLUMNS);
    out.write_record(&header).map_err(err)?;
    for m in mean {
        let date = dates.date(m.day).to_string();
        let rows = m.wards.iter().enumerate().map(|(i, c)| ((i + 1).to_string(), c)).chain(std::iter::once(("city".to_string(), &m.city)));
        for (ward, c) in rows {
            let mut rec = vec![m.day.to_string(), date.clone(), ward];
            rec.extend(c.to_array().iter().map(|&v| fmt_value(v)));
            out.write_record(&rec).map_err(err)?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// City-level rows for every replicate.
pub fn write_replicates_csv<W: Write>(w: W, replicates: &[citysim_core::engine::Replicate], dates: DateAxis, path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::io(path, e.into());
    let mut header = vec!["replicate", "seed", "day", "date"];
    header.extend(OUTPUT_COLUMNS);
    header.extend(["healthy", "infected", "recovered_total", "dead_total"]);
    out.write_record(&header).map_err(err)?;
    for (r, rep) in replicates.iter().enumerate() {
        for s in &rep.stats {
            let mut rec = vec![r.to_string(), rep.seed.to_string(), s.day.to_string(), dates.date(s.day).to_string()];
            rec.extend(s.city.to_array().iter().map(|v| v.to_string()));
            let c = s.census;
            rec.extend([c.healthy, c.infected, c.recovered, c.dead].iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(err)?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
struct EventLine<'a> {
    replicate: usize,
    seed: u64,
    #[serde(flatten)]
    event: &'a InfectionEvent,
}

pub fn write_events<W: Write>(mut w: W, replicates: &[citysim_core::engine::Replicate], path: &Path) -> Result<()> {
    for (r, rep) in replicates.iter().enumerate() {
        for e in &rep.events {
            write_line(&mut w, &EventLine { replicate: r, seed: rep.seed, event: e }, path)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A city-level series read back from a daily output CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CitySeries {
    pub days: Vec<Day>,
    pub dates: Vec<String>,
    pub values: Vec<f64>,
}

pub fn read_city_series(path: &Path, column: &str) -> Result<CitySeries> {
    let mut rdr = csv_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| Error::schema(path, e.to_string()))?.clone();
    columns(path, &headers, &["day", "date", "ward", column])?;
    let mut s = CitySeries { days: Vec::new(), dates: Vec::new(), values: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let ward: String = required(path, &rec, &headers, "ward")?;
        if ward != "city" {
            continue;
        }
        s.days.push(required(path, &rec, &headers, "day")?);
        s.dates.push(required(path, &rec, &headers, "date")?);
        s.values.push(required(path, &rec, &headers, column)?);
    }
    if s.values.is_empty() {
        return Err(Error::schema(path, "no city rows"));
    }
    Ok(s)
}

/// An observed `date,count` series with contiguous dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    pub start: NaiveDate,
    pub counts: Vec<f64>,
}

impl ObservedSeries {
    /// The counts for `first..=last`, or an error naming the gap.
    pub fn window(&self, first: NaiveDate, last: NaiveDate, path: &Path) -> Result<Vec<f64>> {
        let offset = (first - self.start).num_days();
        let len = (last - first).num_days() + 1;
        if offset < 0 || offset + len > self.counts.len() as i64 {
            let end = self.start + chrono::Days::new(self.counts.len().saturating_sub(1) as u64);
            return Err(Error::schema(path, format!("observed series covers {}..{end}, simulation needs {first}..{last}", self.start)));
        }
        Ok(self.counts[offset as usize..(offset + len) as usize].to_vec())
    }
}

pub fn parse_observed<R: Read>(reader: R, path: &Path) -> Result<ObservedSeries> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::schema(path, e.to_string()))?.clone();
    columns(path, &headers, &["date", "count"])?;
    let mut start = None;
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let date: NaiveDate = required(path, &rec, &headers, "date")?;
        let count: f64 = required(path, &rec, &headers, "count")?;
        if count.is_nan() || count < 0.0 {
            return Err(Error::parse(path, line, "count must be non-negative"));
        }
        let first = *start.get_or_insert(date);
        if (date - first).num_days() != counts.len() as i64 {
            return Err(Error::parse(path, line, format!("date {date} breaks the daily sequence")));
        }
        counts.push(count);
    }
    let start = start.ok_or_else(|| Error::schema(path, "no data rows"))?;
    Ok(ObservedSeries { start, counts })
}

pub fn load_observed(path: &Path) -> Result<ObservedSeries> {
    parse_observed(open(path)?, path)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CumulativeSummary {
    pub infections: f64,
    pub positives: f64,
    pub recoveries: f64,
    pub deaths: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorMetrics {
    pub tolerance: f64,
    pub within_days: usize,
    pub within_fraction: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub agents: usize,
    pub scale: f64,
    pub replicates: usize,
    pub seeds: Vec<u64>,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub peak_date: Option<NaiveDate>,
    pub peak_daily_cases: f64,
    pub cumulative: CumulativeSummary,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warmup: Vec<WarmupReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorMetrics>,
}

pub fn summarize(scenario: &str, agents: usize, scale: f64, out: &citysim_core::engine::SimOutput, dates: DateAxis) -> Summary {
    let sum = |f: fn(&Counts<f64>) -> f64| out.mean.iter().map(|m| f(&m.city)).sum::<f64>();
    let peak = out
        .mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.city.new_infections.total_cmp(&b.1.city.new_infections).then(b.0.cmp(&a.0)));
    let first = out.mean.first().map(|m| m.day).unwrap_or(0);
    let last = out.mean.last().map(|m| m.day).unwrap_or(first);
    Summary {
        scenario: scenario.to_string(),
        agents,
        scale,
        replicates: out.replicates.len(),
        seeds: out.replicates.iter().map(|r| r.seed).collect(),
        start_date: dates.date(first),
        end_date: dates.date(last),
        peak_date: peak.map(|(_, m)| dates.date(m.day)),
        peak_daily_cases: peak.map_or(0.0, |(_, m)| m.city.new_infections),
        cumulative: CumulativeSummary {
            infections: sum(|c| c.new_infections),
            positives: sum(|c| c.positives),
            recoveries: sum(|c| c.recovered),
            deaths: sum(|c| c.deaths),
        },
        warmup: out.replicates.iter().filter_map(|r| r.warmup.clone()).collect(),
        error: None,
    }
}
