//! Synthetic population: agents, families, workplaces, schools and
//! healthcare facilities built from ward and sector tables.
//!
//! Generation is a single seeded pass. Ward head-counts are apportioned
//! from the scaled city total, families are carved out of each ward,
//! education seats are filled by school-age children first and then by
//! college-age youths, and the remaining sector seats go to working-age
//! adults. Workplaces are placed in wards in proportion to ward population
//! and agents prefer a workplace in their home ward.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, Stream, StreamKey};
use crate::types::{
    age_group, Agent, AgentId, FacilityId, FacilityKind, FamilyId, HealthcareFacility, Occupation, Payment,
    Sector, SectorId, Ward, WardId, WorkAssignment, Workplace, WorkplaceId,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardRow {
    pub id: WardId,
    pub population: u64,
    /// Persons per km².
    pub density: Option<f64>,
    pub area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardTable {
    pub rows: Vec<WardRow>,
}

impl WardTable {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::config("no data rows"));
        }
        let mut seen = BTreeSet::new();
        for row in &self.rows {
            if !seen.insert(row.id) {
                return Err(Error::config(format!("duplicate ward id {}", row.id)));
            }
        }
        for (i, id) in seen.iter().enumerate() {
            if id.0 as usize != i + 1 {
                return Err(Error::config(format!("ward ids must run from 1 to {}; ward {} is out of place", self.rows.len(), id)));
            }
        }
        for row in &self.rows {
            if row.density.is_some_and(|d| !(d >= 0.0)) || row.area.is_some_and(|a| !(a > 0.0)) {
                return Err(Error::config(format!("ward {}: density must be >= 0 and area > 0", row.id)));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.population).sum()
    }

    fn implied_area(row: &WardRow) -> Option<f64> {
        row.area.or_else(|| match row.density {
            Some(d) if d > 0.0 && row.population > 0 => Some(row.population as f64 / d),
            _ => None,
        })
    }
}

/// Spreads population evenly across wards, keeping the total exact. The
/// first `total % n` wards get one extra person. Densities become the
/// city-wide density.
pub fn uniformize(wards: &WardTable) -> WardTable {
    let n = wards.rows.len() as u64;
    if n == 0 {
        return wards.clone();
    }
    let total = wards.total();
    let (base, extra) = (total / n, total % n);
    let first = wards.rows[0].density;
    let density = if wards.rows.iter().all(|r| r.area.is_none() && r.density == first) {
        first
    } else {
        let area: f64 = wards.rows.iter().filter_map(WardTable::implied_area).sum();
        (area > 0.0).then(|| total as f64 / area)
    };
    let mut rows: Vec<WardRow> = wards
        .rows
        .iter()
        .map(|r| WardRow { id: r.id, population: base, density, area: None })
        .collect();
    rows.sort_by_key(|r| r.id);
    for r in rows.iter_mut().take(extra as usize) {
        r.population += 1;
    }
    WardTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorRow {
    pub name: String,
    pub workers: u64,
    /// One entry per sub-sector; most sectors have a single entry.
    pub centers: Vec<u64>,
    /// Zero means "not stated" and is replaced by the configured default.
    pub hours: f64,
    pub gap_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorTable {
    pub rows: Vec<SectorRow>,
}

impl SectorTable {
    pub fn empty() -> Self {
        SectorTable { rows: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for r in &self.rows {
            if !names.insert(r.name.as_str()) {
                return Err(Error::config(format!("duplicate sector {}", r.name)));
            }
            if r.centers.is_empty() {
                return Err(Error::config(format!("sector {}: no center counts", r.name)));
            }
            if !(r.gap_m > 0.0) {
                return Err(Error::config(format!("sector {}: physical gap must be positive", r.name)));
            }
            if !(0.0..=24.0).contains(&r.hours) {
                return Err(Error::config(format!("sector {}: hours outside [0, 24]", r.name)));
            }
            if r.workers > 0 && r.centers.iter().all(|&c| c == 0) {
                return Err(Error::config(format!("sector {}: workers but no centers", r.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySizeDist {
    Constant { size: u32 },
    /// Poisson restricted to `1..=max`, with its rate solved so the
    /// restricted mean equals `mean`.
    TruncatedPoisson { mean: f64, max: u32 },
}

impl Default for FamilySizeDist {
    fn default() -> Self {
        FamilySizeDist::TruncatedPoisson { mean: 4.5, max: 12 }
    }
}

#[derive(Debug, Clone)]
enum SizeSampler {
    Constant(u32),
    Table(Vec<f64>), // cumulative probabilities for sizes 1..=max
}

fn truncated_poisson_pmf(lambda: f64, max: u32) -> Vec<f64> {
    let mut w = Vec::with_capacity(max as usize);
    let mut term = lambda; // lambda^k / k! for k = 1
    for k in 1..=max {
        w.push(term);
        term *= lambda / (k + 1) as f64;
    }
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn pmf_mean(pmf: &[f64]) -> f64 {
    pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
}

impl FamilySizeDist {
    pub fn mean(&self) -> f64 {
        match *self {
            FamilySizeDist::Constant { size } => size as f64,
            FamilySizeDist::TruncatedPoisson { mean, .. } => mean,
        }
    }

    fn sampler(&self) -> Result<SizeSampler> {
        match *self {
            FamilySizeDist::Constant { size } if size >= 1 => Ok(SizeSampler::Constant(size)),
            FamilySizeDist::Constant { .. } => Err(Error::config("family size must be at least 1")),
            FamilySizeDist::TruncatedPoisson { mean, max } => {
                if !(mean > 1.0 && mean < max as f64) {
                    return Err(Error::config(format!("family mean {mean} must lie in (1, {max})")));
                }
                // The restricted mean increases with the rate; bisect.
                let (mut lo, mut hi) = (1e-9, 4.0 * max as f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if pmf_mean(&truncated_poisson_pmf(mid, max)) < mean {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let pmf = truncated_poisson_pmf(0.5 * (lo + hi), max);
                let mut acc = 0.0;
                let cdf = pmf.iter().map(|p| { acc += p; acc }).collect();
                Ok(SizeSampler::Table(cdf))
            }
        }
    }
}

impl SizeSampler {
    fn draw(&self, rng: &mut Stream) -> usize {
        match self {
            SizeSampler::Constant(s) => *s as usize,
            SizeSampler::Table(cdf) => {
                let u = rng.uniform();
                cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) + 1
            }
        }
    }
}

/// Partitions `agents` into families in order; the last family takes the
/// remainder when the final draw overshoots.
pub fn assign_families(agents: &[AgentId], dist: &FamilySizeDist, rng: &mut Stream) -> Result<Vec<Vec<AgentId>>> {
    if agents.is_empty() {
        return Err(Error::config("cannot form families from zero agents"));
    }
    let sampler = dist.sampler()?;
    let mut families = Vec::new();
    let mut rest = agents;
    while !rest.is_empty() {
        let size = sampler.draw(rng).min(rest.len());
        let (head, tail) = rest.split_at(size);
        families.push(head.to_vec());
        rest = tail;
    }
    Ok(families)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    /// Fraction of the census population to generate; every count-valued
    /// input scales with it.
    pub scale: f64,
    pub family_size: FamilySizeDist,
    /// Probability of each 10-year age band, starting at 0-9.
    pub age_bands: Vec<f64>,
    /// Comorbidity probability per age group.
    pub comorbidity_by_age_group: Vec<f64>,
    pub citizen_fraction: f64,
    pub student_min_age: u8,
    pub college_min_age: u8,
    pub student_max_age: u8,
    pub worker_min_age: u8,
    pub worker_max_age: u8,
    /// Probability that an agent looks for a workplace in the home ward first.
    pub local_work_probability: f64,
    /// Workplace capacity as a multiple of the sector's mean size.
    pub capacity_slack: f64,
    pub education_sector: String,
    pub healthcare_sector: String,
    pub essential_sectors: Vec<String>,
    /// Working hours used where the sector table says 0.
    pub default_working_hours: f64,
    /// Beds per hospital, healthcare centre and isolation centre.
    pub beds_per_facility: [u32; 3],
    /// Share of the whole population that commutes by public transport.
    pub transport_users_fraction: f64,
    pub visiting_places_per_agent: usize,
    pub mean_family_income: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            scale: 1.0,
            family_size: FamilySizeDist::default(),
            age_bands: vec![0.08, 0.12, 0.19, 0.17, 0.15, 0.12, 0.09, 0.05, 0.02, 0.01],
            comorbidity_by_age_group: vec![0.01, 0.02, 0.04, 0.07, 0.12, 0.18, 0.26, 0.34, 0.40, 0.40, 0.40],
            citizen_fraction: 0.95,
            student_min_age: 5,
            college_min_age: 18,
            student_max_age: 22,
            worker_min_age: 20,
            worker_max_age: 59,
            local_work_probability: 0.6,
            capacity_slack: 1.5,
            education_sector: "Education".to_string(),
            healthcare_sector: "Healthcare".to_string(),
            essential_sectors: vec!["Healthcare".to_string(), "Utilities".to_string(), "Agriculture".to_string()],
            default_working_hours: 12.0,
            beds_per_facility: [100, 50, 25],
            transport_users_fraction: 0.17,
            visiting_places_per_agent: 3,
            mean_family_income: 300.0,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::config(format!("scale {} must lie in (0, 1]", self.scale)));
        }
        if self.age_bands.is_empty() || self.age_bands.len() > 10 || self.age_bands.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::config("age_bands needs 1 to 10 non-negative weights"));
        }
        if !(self.age_bands.iter().sum::<f64>() > 0.0) {
            return Err(Error::config("age_bands must not all be zero"));
        }
        if self.comorbidity_by_age_group.len() != 11
            || self.comorbidity_by_age_group.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::config("comorbidity_by_age_group needs 11 probabilities"));
        }
        let unit = [
            ("citizen_fraction", self.citizen_fraction),
            ("local_work_probability", self.local_work_probability),
            ("transport_users_fraction", self.transport_users_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.student_min_age <= self.college_min_age && self.college_min_age <= self.student_max_age + 1) {
            return Err(Error::config("student ages must satisfy min <= college <= max + 1"));
        }
        if self.worker_min_age > self.worker_max_age {
            return Err(Error::config("worker_min_age exceeds worker_max_age"));
        }
        if !(self.capacity_slack >= 1.0) {
            return Err(Error::config("capacity_slack must be at least 1"));
        }
        if !(self.default_working_hours > 0.0 && self.default_working_hours <= 24.0) {
            return Err(Error::config("default_working_hours must lie in (0, 24]"));
        }
        self.family_size.sampler().map(|_| ())
    }
}

/// The generated city: agents, families and places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub agents: Vec<Agent>,
    /// Members of each family, indexed by family id.
    pub families: Vec<Vec<AgentId>>,
    pub family_wards: Vec<WardId>,
    pub sectors: Vec<Sector>,
    pub wards: Vec<Ward>,
    pub workplaces: Vec<Workplace>,
    pub facilities: Vec<HealthcareFacility>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn sector_of(&self, wp: WorkplaceId) -> &Sector {
        &self.sectors[self.workplaces[wp.index()].sector.0 as usize]
    }

    /// Checks every cross-reference and invariant of the generated city.
    pub fn validate(&self) -> Result<()> {
        let n = self.agents.len();
        for (i, a) in self.agents.iter().enumerate() {
            if a.id.index() != i {
                return Err(Error::invariant(format!("agent at position {i} has id {}", a.id)));
            }
            a.validate()?;
            if a.family.index() >= self.families.len() || a.home_ward.0 == 0 || a.home_ward.slot() >= self.wards.len() {
                return Err(Error::invariant(format!("agent {} has a dangling family or ward", a.id)));
            }
        }
        if self.family_wards.len() != self.families.len() {
            return Err(Error::invariant("family ward list length differs from family count"));
        }
        let mut seen = vec![false; n];
        for (f, members) in self.families.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::invariant(format!("family {f} is empty")));
            }
            for m in members {
                let slot = seen.get_mut(m.index()).ok_or(Error::UnknownAgent(*m))?;
                if core::mem::replace(slot, true) || self.agents[m.index()].family.index() != f {
                    return Err(Error::invariant(format!("agent {m} is not in exactly one family")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invariant("some agent has no family"));
        }
        let ward_total: u64 = self.wards.iter().map(|w| w.population as u64).sum();
        if ward_total != n as u64 {
            return Err(Error::invariant(format!("ward populations sum to {ward_total}, not {n}")));
        }
        let mut per_ward = vec![0u32; self.wards.len()];
        for a in &self.agents {
            per_ward[a.home_ward.slot()] += 1;
        }
        for (w, count) in self.wards.iter().zip(&per_ward) {
            if w.population != *count {
                return Err(Error::invariant(format!("ward {} lists {} residents, has {}", w.id, w.population, count)));
            }
        }
        let mut employer = vec![None; n];
        for (i, wp) in self.workplaces.iter().enumerate() {
            if wp.id.index() != i {
                return Err(Error::invariant(format!("workplace at position {i} has id {}", wp.id)));
            }
            wp.validate()?;
            for w in &wp.workers {
                let slot = employer.get_mut(w.index()).ok_or(Error::UnknownAgent(*w))?;
                if slot.replace(wp.id).is_some() {
                    return Err(Error::invariant(format!("agent {w} works in two places")));
                }
            }
        }
        for a in &self.agents {
            let listed = employer[a.id.index()];
            if a.workplace.map(|w| w.workplace) != listed {
                return Err(Error::invariant(format!("agent {} workplace disagrees with worker lists", a.id)));
            }
            if let Some(w) = a.workplace {
                let wp = &self.workplaces[w.workplace.index()];
                if wp.sector != w.sector || wp.sub_sector != w.sub_sector {
                    return Err(Error::invariant(format!("agent {} has a stale sector triple", a.id)));
                }
                let edu = self.sectors[wp.sector.0 as usize].is_education;
                if a.occupation == Occupation::Student && !edu {
                    return Err(Error::invariant(format!("student {} outside education", a.id)));
                }
            }
        }
        for f in &self.facilities {
            f.validate()?;
        }
        for w in &self.wards {
            w.validate()?;
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `target` over `weights`.
pub(crate) fn apportion(target: u64, weights: &[u64]) -> Vec<u64> {
    let total: u64 = weights.iter().sum();
    if total == 0 {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = target;
        }
        return out;
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let exact = target as u128 * w as u128;
        out.push((exact / total as u128) as u64);
        rems.push(((exact % total as u128) as u64, i));
    }
    let short = target - out.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(short as usize) {
        out[i] += 1;
    }
    out
}

fn scaled(count: u64, scale: f64) -> u64 {
    libm::round(count as f64 * scale) as u64
}

/// Places with a fixed number of seats per workplace, filled with a
/// preference for the member's home ward.
struct SeatPool {
    /// Open workplaces per ward slot.
    local: Vec<Vec<usize>>,
    global: Vec<usize>,
    remaining: Vec<u32>,
}

impl SeatPool {
    fn new(places: &[(usize, WardId)], capacity: u32, wards: usize) -> Self {
        let mut local = vec![Vec::new(); wards];
        for &(wp, ward) in places {
            local[ward.slot()].push(wp);
        }
        SeatPool {
            local,
            global: places.iter().map(|p| p.0).collect(),
            remaining: places.iter().map(|_| capacity).collect(),
        }
    }

    fn pick_from(list: &mut Vec<usize>, remaining: &mut [u32], offset: usize, rng: &mut Stream) -> Option<usize> {
        while !list.is_empty() {
            let i = rng.below(list.len() as u64) as usize;
            let wp = list[i];
            if remaining[wp - offset] > 0 {
                remaining[wp - offset] -= 1;
                return Some(wp);
            }
            list.swap_remove(i);
        }
        None
    }

    fn take(&mut self, ward: WardId, local_p: f64, offset: usize, rng: &mut Stream) -> Option<usize> {
        if rng.bernoulli(local_p) {
            if let Some(wp) = Self::pick_from(&mut self.local[ward.slot()], &mut self.remaining, offset, rng) {
                return Some(wp);
            }
        }
        Self::pick_from(&mut self.global, &mut self.remaining, offset, rng)
    }
}

fn ward_center(ward: WardId) -> (f64, f64) {
    let i = ward.0 as f64 - 1.0;
    let (row, col) = (libm::floor(i / 12.0), i % 12.0);
    (22.45 + row * 0.02, 88.28 + col * 0.015)
}

/// Builds a population from census-style tables. Identical inputs and seed
/// give an identical population.
pub fn synthesize_population(
    wards: &WardTable,
    sectors: &SectorTable,
    cfg: &PopulationConfig,
    seed: u64,
) -> Result<Population> {
    wards.validate()?;
    sectors.validate()?;
    cfg.validate()?;
    let key = StreamKey::root(seed).child(label::POPULATION);
    let mut rows = wards.rows.clone();
    rows.sort_by_key(|r| r.id);
    let n_wards = rows.len();

    // Head-counts per ward.
    let target = scaled(wards.total(), cfg.scale);
    let counts = apportion(target, &rows.iter().map(|r| r.population).collect::<Vec<_>>());
    if target > u32::MAX as u64 {
        return Err(Error::config("population too large for 32-bit agent ids"));
    }

    // Agents, ages, families.
    let band_total: f64 = cfg.age_bands.iter().sum();
    let mut band_cdf = Vec::with_capacity(cfg.age_bands.len());
    let mut acc = 0.0;
    for w in &cfg.age_bands {
        acc += w / band_total;
        band_cdf.push(acc);
    }
    let mut agents: Vec<Agent> = Vec::with_capacity(target as usize);
    let mut families: Vec<Vec<AgentId>> = Vec::new();
    let mut family_wards: Vec<WardId> = Vec::new();
    let mut rng = key.child(1).stream();
    let sigma = 0.6;
    for (row, &count) in rows.iter().zip(&counts) {
        if count == 0 {
            continue;
        }
        let first = agents.len() as u32;
        let ids: Vec<AgentId> = (first..first + count as u32).map(AgentId).collect();
        let fams = assign_families(&ids, &cfg.family_size, &mut key.path(&[2, row.id.0 as u64]).stream())?;
        for members in fams {
            let fid = FamilyId(families.len() as u32);
            let z: f64 = StandardNormal.sample(&mut rng);
            let income = cfg.mean_family_income * libm::exp(sigma * z - 0.5 * sigma * sigma);
            for &m in &members {
                let u = rng.uniform();
                let band = band_cdf.iter().position(|&c| u < c).unwrap_or(band_cdf.len() - 1);
                let age = (band * 10) as u8 + rng.below(10) as u8;
                let group = age_group(age);
                agents.push(Agent {
                    id: m,
                    age,
                    age_group: group,
                    family: fid,
                    home_ward: row.id,
                    is_citizen: rng.bernoulli(cfg.citizen_fraction),
                    workplace: None,
                    visiting_places: Vec::new(),
                    comorbidity: rng.bernoulli(cfg.comorbidity_by_age_group[group as usize]),
                    income_level: income,
                    occupation: Occupation::Dependent,
                    uses_public_transport: false,
                });
            }
            families.push(members);
            family_wards.push(row.id);
        }
    }

    // Sector list and scaled seat counts.
    let sector_defs: Vec<Sector> = sectors
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| Sector {
            id: SectorId(i as u16),
            name: r.name.clone(),
            working_hours: if r.hours > 0.0 { r.hours } else { cfg.default_working_hours },
            physical_gap: r.gap_m,
            is_essential: cfg.essential_sectors.iter().any(|s| s == &r.name),
            is_education: r.name == cfg.education_sector,
            is_healthcare: r.name == cfg.healthcare_sector,
        })
        .collect();
    let seats: Vec<u64> = sectors.rows.iter().map(|r| scaled(r.workers, cfg.scale)).collect();
    let centers: Vec<Vec<u64>> = sectors
        .rows
        .iter()
        .zip(&seats)
        .map(|(r, &w)| {
            r.centers
                .iter()
                .map(|&c| if w == 0 || c == 0 { 0 } else { scaled(c, cfg.scale).max(1) })
                .collect()
        })
        .collect();

    // Students: school-age first, then college-age, each group shuffled.
    let mut rng = key.child(3).stream();
    let edu = sector_defs.iter().position(|s| s.is_education);
    let edu_seats = edu.map_or(0, |e| seats[e]) as usize;
    let mut school_age: Vec<u32> = Vec::new();
    let mut college_age: Vec<u32> = Vec::new();
    for a in &agents {
        if a.age >= cfg.student_min_age && a.age < cfg.college_min_age {
            school_age.push(a.id.0);
        } else if a.age >= cfg.college_min_age && a.age <= cfg.student_max_age {
            college_age.push(a.id.0);
        }
    }
    rng.shuffle(&mut school_age);
    rng.shuffle(&mut college_age);
    let schoolers: Vec<u32> = school_age.iter().copied().take(edu_seats).collect();
    let colleges: Vec<u32> = college_age.iter().copied().take(edu_seats - schoolers.len()).collect();
    let staff_needed = edu_seats - schoolers.len() - colleges.len();
    let mut is_student = vec![false; agents.len()];
    for &s in schoolers.iter().chain(&colleges) {
        is_student[s as usize] = true;
    }

    // Working-age pool.
    let mut pool: Vec<u32> = agents
        .iter()
        .filter(|a| a.age >= cfg.worker_min_age && a.age <= cfg.worker_max_age && !is_student[a.id.index()])
        .map(|a| a.id.0)
        .collect();
    rng.shuffle(&mut pool);
    let demanded: u64 = seats
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != edu)
        .map(|(_, &w)| w)
        .sum::<u64>()
        + staff_needed as u64;
    if demanded > pool.len() as u64 {
        return Err(Error::Infeasible { demanded, available: pool.len() as u64 });
    }

    // Workplaces, placed in wards in proportion to head-count.
    let mut ward_cdf = Vec::with_capacity(n_wards);
    let mut acc = 0u64;
    for &c in &counts {
        acc += c;
        ward_cdf.push(acc);
    }
    let mut place_rng = key.child(4).stream();
    let draw_ward = |rng: &mut Stream| -> WardId {
        if acc == 0 {
            return rows[0].id;
        }
        let u = rng.below(acc);
        let slot = ward_cdf.partition_point(|&c| c <= u);
        rows[slot].id
    };
    let mut workplaces: Vec<Workplace> = Vec::new();
    // (sector, sub-sector) -> range of workplace indices
    let mut groups: Vec<(usize, u16, core::ops::Range<usize>)> = Vec::new();
    let new_places = |sector: &Sector, sub: u16, n: u64, rng: &mut Stream, out: &mut Vec<Workplace>| {
        let start = out.len();
        for _ in 0..n {
            let ward = draw_ward(rng);
            let (lat, lon) = ward_center(ward);
            out.push(Workplace {
                id: WorkplaceId(out.len() as u32),
                sector: sector.id,
                sub_sector: sub,
                ward,
                location: (lat + (rng.uniform() - 0.5) * 0.01, lon + (rng.uniform() - 0.5) * 0.01),
                is_essential: sector.is_essential,
                workers: Vec::new(),
                visitors: Vec::new(),
                income_level: 0.0,
                working_hours: sector.working_hours,
                physical_gap: sector.physical_gap,
            });
        }
        start..out.len()
    };

    let mut assign_rng = key.child(5).stream();
    let mut seat_members = |members: &[u32],
                            range: core::ops::Range<usize>,
                            sector: &Sector,
                            sub: u16,
                            occupation: Occupation,
                            workplaces: &mut Vec<Workplace>,
                            agents: &mut Vec<Agent>| {
        if members.is_empty() || range.is_empty() {
            return;
        }
        let mean = members.len() as f64 / range.len() as f64;
        let cap = libm::ceil(mean * cfg.capacity_slack).max(1.0) as u32;
        let places: Vec<(usize, WardId)> = range.clone().map(|i| (i, workplaces[i].ward)).collect();
        let mut seats = SeatPool::new(&places, cap, n_wards);
        for &m in members {
            let ward = agents[m as usize].home_ward;
            let wp = seats
                .take(ward, cfg.local_work_probability, range.start, &mut assign_rng)
                .expect("capacity covers every member");
            workplaces[wp].workers.push(AgentId(m));
            let a = &mut agents[m as usize];
            a.workplace = Some(WorkAssignment { sector: sector.id, sub_sector: sub, workplace: WorkplaceId(wp as u32) });
            a.occupation = occupation;
        }
    };

    let mut pool_iter = pool.into_iter();
    for (si, sector) in sector_defs.iter().enumerate() {
        let total_centers: u64 = centers[si].iter().sum();
        if total_centers == 0 {
            continue;
        }
        if sector.is_education {
            // Sub-sector 0 is schools, 1 colleges; centers split by enrolment.
            let (ns, nc) = (schoolers.len() as u64, colleges.len() as u64);
            let mut school_n = if nc == 0 {
                total_centers
            } else if ns == 0 {
                0
            } else {
                libm::round(total_centers as f64 * ns as f64 / (ns + nc) as f64) as u64
            };
            let mut college_n = total_centers - school_n;
            if ns > 0 && school_n == 0 {
                school_n = 1;
                college_n = college_n.saturating_sub(1).max(u64::from(nc > 0));
            }
            if nc > 0 && college_n == 0 {
                college_n = 1;
                school_n = school_n.saturating_sub(1).max(u64::from(ns > 0));
            }
            let schools = new_places(sector, 0, school_n, &mut place_rng, &mut workplaces);
            let colls = new_places(sector, 1, college_n, &mut place_rng, &mut workplaces);
            seat_members(&schoolers, schools.clone(), sector, 0, Occupation::Student, &mut workplaces, &mut agents);
            seat_members(&colleges, colls.clone(), sector, 1, Occupation::Student, &mut workplaces, &mut agents);
            let staff: Vec<u32> = pool_iter.by_ref().take(staff_needed).collect();
            let all = schools.start..colls.end;
            seat_members(&staff, all.clone(), sector, 0, Occupation::Worker, &mut workplaces, &mut agents);
            // Staff seated in a college take the college sub-sector.
            for &s in &staff {
                let wp = agents[s as usize].workplace.unwrap().workplace;
                let sub = workplaces[wp.index()].sub_sector;
                agents[s as usize].workplace.as_mut().unwrap().sub_sector = sub;
            }
            groups.push((si, 0, schools));
            groups.push((si, 1, colls));
        } else {
            let per_sub = apportion(seats[si], &centers[si]);
            for (sub, (&n, &workers)) in centers[si].iter().zip(&per_sub).enumerate() {
                let range = new_places(sector, sub as u16, n, &mut place_rng, &mut workplaces);
                let members: Vec<u32> = pool_iter.by_ref().take(workers as usize).collect();
                seat_members(&members, range.clone(), sector, sub as u16, Occupation::Worker, &mut workplaces, &mut agents);
                groups.push((si, sub as u16, range));
            }
        }
    }
    for wp in &mut workplaces {
        wp.income_level = 500.0 * wp.workers.len() as f64;
    }

    // Public transport users are drawn among commuters.
    let commuters = agents.iter().filter(|a| a.workplace.is_some()).count();
    let mut rng = key.child(6).stream();
    if commuters > 0 {
        let p = (cfg.transport_users_fraction * agents.len() as f64 / commuters as f64).min(1.0);
        for a in agents.iter_mut().filter(|a| a.workplace.is_some()) {
            a.uses_public_transport = rng.bernoulli(p);
        }
    }

    // Visiting places: shops, hotels and offices in the home ward.
    let visitable: Vec<bool> = workplaces
        .iter()
        .map(|w| {
            let s = &sector_defs[w.sector.0 as usize];
            !s.is_education && !s.is_healthcare
        })
        .collect();
    let mut by_ward: Vec<Vec<u32>> = vec![Vec::new(); n_wards];
    for w in workplaces.iter().filter(|w| visitable[w.id.index()]) {
        by_ward[w.ward.slot()].push(w.id.0);
    }
    let all_visitable: Vec<u32> = workplaces.iter().filter(|w| visitable[w.id.index()]).map(|w| w.id.0).collect();
    let mut picks = Vec::new();
    for a in agents.iter_mut() {
        let local = &by_ward[a.home_ward.slot()];
        let options = if local.is_empty() { &all_visitable } else { local };
        if options.is_empty() {
            continue;
        }
        let own = a.workplace.map(|w| w.workplace.0);
        rng.sample_distinct(options.len(), cfg.visiting_places_per_agent, None, &mut picks);
        for &i in &picks {
            let wp = options[i];
            if Some(wp) != own {
                a.visiting_places.push(WorkplaceId(wp));
                workplaces[wp as usize].visitors.push(a.id);
            }
        }
    }

    // Healthcare facilities mirror the healthcare workplaces.
    let mut facilities = Vec::new();
    for &(si, sub, ref range) in &groups {
        if !sector_defs[si].is_healthcare || range.is_empty() {
            continue;
        }
        let kind = FacilityKind::ALL[(sub as usize).min(2)];
        let unscaled = sectors.rows[si].centers[sub as usize];
        let per = cfg.beds_per_facility[(sub as usize).min(2)] as u64;
        let beds_total = scaled(unscaled * per, cfg.scale).max(range.len() as u64);
        let beds = apportion(beds_total, &vec![1; range.len()]);
        for (wp, b) in range.clone().zip(beds) {
            let beds = b as u32;
            facilities.push(HealthcareFacility {
                id: FacilityId(facilities.len() as u32),
                workplace: WorkplaceId(wp as u32),
                kind,
                ward: workplaces[wp].ward,
                beds,
                icu_beds: beds / 10,
                ventilators: beds / 20,
                workers: workplaces[wp].workers.clone(),
                payment: if facilities.len() % 3 == 2 { Payment::Paid } else { Payment::Free },
                occupancy_count: 0,
            });
        }
    }

    // Wards.
    let mut ward_list: Vec<Ward> = rows
        .iter()
        .zip(&counts)
        .map(|(r, &c)| {
            let density = match (r.density, r.area) {
                (_, Some(area)) => c as f64 / area,
                (Some(d), None) => d,
                (None, None) => 0.0,
            };
            Ward {
                id: r.id,
                population: c as u32,
                density,
                area: r.area,
                workplace_ids: Vec::new(),
                school_ids: Vec::new(),
                facility_ids: Vec::new(),
            }
        })
        .collect();
    for w in &workplaces {
        let ward = &mut ward_list[w.ward.slot()];
        if sector_defs[w.sector.0 as usize].is_education {
            ward.school_ids.push(w.id);
        } else {
            ward.workplace_ids.push(w.id);
        }
    }
    for f in &facilities {
        ward_list[f.ward.slot()].facility_ids.push(f.id);
    }

    let pop = Population { agents, families, family_wards, sectors: sector_defs, wards: ward_list, workplaces, facilities };
    debug_assert!(pop.validate().is_ok());
    Ok(pop)
}
