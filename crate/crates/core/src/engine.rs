//! The daily simulation loop, replicate runs and reverse seeding.
//!
//! A day runs nine phases in fixed order: resolve policy, progress disease,
//! sample schedules, generate contacts, transmit, external infection,
//! testing and tracing, containment update, statistics. Schedules and
//! contacts fan out over agents and places; everything that touches the
//! queue, the beds or the zones is serialized.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calendar::PolicyCalendar;
use crate::disease::{advance_agent, classify_course, exposure_probability, resolve_outcome, sample_viral_load, Courseplan, DiseaseParams};
use crate::mobility::{external_infection, generate_contacts, sample_schedule, ContactContext, MobilityParams, ScheduleInput, Setting};
use crate::par;
use crate::policy::{route_case, trace_contacts, update_containment_zones, BedLedger, ContactLog, PolicyParams, TestQueue, TestReason};
use crate::population::Population;
use crate::rng::{label, StreamKey};
use crate::types::{AgentId, Day, DiseaseState, MobilityState, VirusState, WardId};
use crate::{Error, Result};

/// Reverse-seeding warmup: simulate from `start_day` up to the main start
/// under several seeds and initial infection counts, and keep the run whose
/// cumulative positives come closest to `target_positive`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Warmup {
    pub start_day: Day,
    pub target_positive: u32,
    /// Initial infection counts to try, already scaled to the population.
    pub infection_counts: Vec<u32>,
    /// Candidate seeds per replicate.
    pub candidates: u32,
    /// Relative miss above which the result is flagged.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub disease: DiseaseParams,
    pub mobility: MobilityParams,
    pub policy: PolicyParams,
    pub calendar: PolicyCalendar,
    /// Calendar day of the first simulated day.
    pub start_day: Day,
    pub days: u32,
    pub initial_infections: u32,
    pub seeds: Vec<u64>,
    pub record_events: bool,
    pub warmup: Option<Warmup>,
}

impl SimConfig {
    pub fn validate(&self, pop: &Population) -> Result<()> {
        self.disease.validate()?;
        self.mobility.validate()?;
        self.policy.validate()?;
        self.calendar.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let end = self.start_day as u64 + self.days as u64;
        if end > self.calendar.days as u64 {
            return Err(Error::DayOutOfRange { day: end.saturating_sub(1) as Day, days: self.calendar.days });
        }
        if self.initial_infections as usize > pop.len() {
            return Err(Error::TooManySeeds { requested: self.initial_infections, healthy: pop.len() as u32 });
        }
        for a in &pop.agents {
            self.disease.death.get(a.age_group, a.comorbidity)?;
        }
        if let Some(w) = &self.warmup {
            if w.start_day >= self.start_day {
                return Err(Error::config("warmup must start before the simulation"));
            }
            if w.infection_counts.is_empty() || w.candidates == 0 {
                return Err(Error::config("warmup needs at least one candidate seed and infection count"));
            }
            if let Some(&n) = w.infection_counts.iter().find(|&&n| n as usize > pop.len()) {
                return Err(Error::TooManySeeds { requested: n, healthy: pop.len() as u32 });
            }
        }
        Ok(())
    }
}

/// Daily counts for one ward or the whole city. `recovered` and `deaths`
/// are new that day; `active` and `hospitalized` are end-of-day census.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts<T = u32> {
    pub new_infections: T,
    pub positives: T,
    pub active: T,
    pub recovered: T,
    pub deaths: T,
    pub tests: T,
    pub traced: T,
    pub hospitalized: T,
}

impl Counts<u32> {
    fn add(&mut self, o: &Counts<u32>) {
        self.new_infections += o.new_infections;
        self.positives += o.positives;
        self.active += o.active;
        self.recovered += o.recovered;
        self.deaths += o.deaths;
        self.tests += o.tests;
        self.traced += o.traced;
        self.hospitalized += o.hospitalized;
    }

    pub fn to_array(&self) -> [u32; 8] {
        [self.new_infections, self.positives, self.active, self.recovered, self.deaths, self.tests, self.traced, self.hospitalized]
    }
}

impl Counts<f64> {
    pub fn to_array(&self) -> [f64; 8] {
        [self.new_infections, self.positives, self.active, self.recovered, self.deaths, self.tests, self.traced, self.hospitalized]
    }

    fn from_array(a: [f64; 8]) -> Self {
        Counts {
            new_infections: a[0],
            positives: a[1],
            active: a[2],
            recovered: a[3],
            deaths: a[4],
            tests: a[5],
            traced: a[6],
            hospitalized: a[7],
        }
    }
}

/// End-of-day virus state census.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub healthy: u32,
    pub infected: u32,
    pub recovered: u32,
    pub dead: u32,
}

impl Census {
    pub fn total(&self) -> u64 {
        self.healthy as u64 + self.infected as u64 + self.recovered as u64 + self.dead as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyStats {
    pub day: Day,
    pub city: Counts,
    /// Indexed by ward slot.
    pub wards: Vec<Counts>,
    pub census: Census,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStats {
    pub day: Day,
    pub city: Counts<f64>,
    pub wards: Vec<Counts<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Seed,
    Contact,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfectionEvent {
    pub day: Day,
    pub source: Option<AgentId>,
    pub target: AgentId,
    pub setting: Option<Setting>,
    pub cause: Cause,
}

/// Running totals since the state was created.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cumulative {
    pub infections: u64,
    pub positives: u64,
    pub recoveries: u64,
    pub deaths: u64,
}

#[derive(Debug, Clone)]
pub struct SimState {
    /// Next calendar day to simulate.
    pub day: Day,
    pub population: Arc<Population>,
    pub states: Vec<DiseaseState>,
    pub plans: Vec<Option<Courseplan>>,
    /// Day each agent entered its current mobility state.
    pub mobility_since: Vec<Day>,
    /// Agents with a positive test for their current or past infection.
    pub confirmed: Vec<bool>,
    pub log: ContactLog,
    pub queue: TestQueue,
    pub beds: BedLedger,
    /// Containment zones in force, sorted.
    pub zones: Vec<WardId>,
    pub key: StreamKey,
    pub seed: u64,
    pub cumulative: Cumulative,
    pub record_events: bool,
    pub events: Vec<InfectionEvent>,
}

impl SimState {
    /// An all-healthy city about to simulate `day`.
    pub fn new(population: Arc<Population>, day: Day, seed: u64, policy: &PolicyParams) -> Self {
        let n = population.len();
        SimState {
            day,
            states: vec![DiseaseState::healthy(); n],
            plans: vec![None; n],
            mobility_since: vec![day; n],
            confirmed: vec![false; n],
            log: ContactLog::new(n, policy.trace_window_days),
            queue: TestQueue::new(n),
            beds: BedLedger::new(&population.facilities, n),
            zones: Vec::new(),
            key: StreamKey::root(seed),
            seed,
            cumulative: Cumulative::default(),
            record_events: false,
            events: Vec::new(),
            population,
        }
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for s in &self.states {
            match s.virus {
                VirusState::Healthy => c.healthy += 1,
                VirusState::InfectedSymptomatic | VirusState::InfectedAsymptomatic => c.infected += 1,
                VirusState::Recovered => c.recovered += 1,
                VirusState::Dead => c.dead += 1,
            }
        }
        c
    }

    fn infect(&mut self, agent: AgentId, day: Day, disease: &DiseaseParams, event: InfectionEvent) {
        let mut rng = self.key.path(&[label::COURSE, agent.0 as u64, day as u64]).stream();
        let load = sample_viral_load(disease, &mut rng);
        let plan = classify_course(load, disease, &mut rng);
        let s = &mut self.states[agent.index()];
        s.virus = VirusState::InfectedAsymptomatic;
        s.infected_on = Some(day);
        s.viral_load = Some(load);
        s.peak_day = Some(day + plan.peak_day_offset);
        s.recovery_day = Some(day + plan.recovery_or_death_day_offset);
        self.plans[agent.index()] = Some(plan);
        self.cumulative.infections += 1;
        if self.record_events {
            self.events.push(event);
        }
    }

    fn set_mobility(&mut self, agent: AgentId, m: MobilityState, day: Day) {
        let i = agent.index();
        if self.states[i].mobility != m {
            self.states[i].mobility = m;
            self.mobility_since[i] = day;
        }
    }
}

/// Infects `n` distinct healthy agents, chosen uniformly, on the state's
/// current day. They become infectious the day after.
pub fn seed_infections(state: &mut SimState, n: u32, disease: &DiseaseParams) -> Result<Vec<AgentId>> {
    let healthy: Vec<AgentId> =
        state.states.iter().enumerate().filter(|(_, s)| s.virus == VirusState::Healthy).map(|(i, _)| AgentId(i as u32)).collect();
    if n as usize > healthy.len() {
        return Err(Error::TooManySeeds { requested: n, healthy: healthy.len() as u32 });
    }
    let mut rng = state.key.path(&[label::SEEDING, state.day as u64]).stream();
    let mut picks = Vec::new();
    rng.sample_distinct(healthy.len(), n as usize, None, &mut picks);
    let mut chosen: Vec<AgentId> = picks.into_iter().map(|i| healthy[i]).collect();
    chosen.sort_unstable();
    let day = state.day;
    for &a in &chosen {
        let ev = InfectionEvent { day, source: None, target: a, setting: None, cause: Cause::Seed };
        state.infect(a, day, disease, ev);
    }
    Ok(chosen)
}

/// Parameters `step_day` needs; borrowed from a [`SimConfig`].
#[derive(Debug, Clone, Copy)]
pub struct StepParams<'a> {
    pub disease: &'a DiseaseParams,
    pub mobility: &'a MobilityParams,
    pub policy: &'a PolicyParams,
    pub calendar: &'a PolicyCalendar,
}

impl<'a> From<&'a SimConfig> for StepParams<'a> {
    fn from(c: &'a SimConfig) -> Self {
        StepParams { disease: &c.disease, mobility: &c.mobility, policy: &c.policy, calendar: &c.calendar }
    }
}

/// Simulates `state.day` and advances to the next day.
pub fn step_day(state: &mut SimState, p: StepParams<'_>) -> Result<DailyStats> {
    let today = state.day;
    let pop = Arc::clone(&state.population);
    let n = pop.len();
    let n_wards = pop.wards.len();
    let mut wards = vec![Counts::default(); n_wards];
    let ward_of = |a: usize| pop.agents[a].home_ward.slot();

    // 1. Policy.
    let settings = p.calendar.resolve(today)?;
    let mut locked = vec![false; n_wards];
    for (slot, l) in locked.iter_mut().enumerate() {
        let id = WardId(slot as u16 + 1);
        *l = settings.lockdown.covers(id) || state.zones.binary_search(&id).is_ok();
    }

    // 2. Disease progression and releases.
    for i in 0..n {
        let s = state.states[i];
        if s.virus.is_infected() {
            let infected_on = s.infected_on.unwrap_or(today);
            let Some(plan) = state.plans[i].as_mut() else {
                return Err(Error::invariant(alloc::format!("agent {i} infected without a course plan")));
            };
            if plan.outcome.is_none() && today.saturating_sub(infected_on) >= plan.peak_day_offset {
                let mut rng = state.key.path(&[label::OUTCOME, i as u64, infected_on as u64]).stream();
                let agent = &pop.agents[i];
                plan.outcome = Some(resolve_outcome(agent.age_group, agent.comorbidity, p.disease, &mut rng)?);
            }
            let next = advance_agent(s, Some(plan), today);
            let id = AgentId(i as u32);
            match next.virus {
                VirusState::Recovered => {
                    state.states[i] = next;
                    state.plans[i] = None;
                    state.beds.release(id);
                    if matches!(next.mobility, MobilityState::Hospitalized | MobilityState::Isolated | MobilityState::Quarantined) {
                        state.set_mobility(id, MobilityState::Free, today);
                    }
                    state.cumulative.recoveries += 1;
                    wards[ward_of(i)].recovered += 1;
                }
                VirusState::Dead => {
                    state.states[i] = next;
                    state.plans[i] = None;
                    state.beds.release(id);
                    state.queue.remove(id);
                    state.cumulative.deaths += 1;
                    wards[ward_of(i)].deaths += 1;
                }
                _ => state.states[i] = next,
            }
        }
        let s = &state.states[i];
        if s.mobility == MobilityState::Quarantined
            && s.virus != VirusState::Dead
            && today.saturating_sub(state.mobility_since[i]) >= p.policy.quarantine_days
        {
            state.set_mobility(AgentId(i as u32), MobilityState::Free, today);
        }
    }

    // 3. Schedules.
    let schedules = {
        let states = &state.states;
        let beds = &state.beds;
        let key = state.key.path(&[label::SCHEDULE, today as u64]);
        let settings = &settings;
        let locked = &locked;
        let pop = &*pop;
        par::map_range(n, move |i| {
            let s = &states[i];
            if s.virus == VirusState::Dead {
                return None;
            }
            let agent = &pop.agents[i];
            let workplace = agent.workplace.map(|w| &pop.workplaces[w.workplace.index()]);
            let input = ScheduleInput {
                agent,
                mobility: s.mobility,
                facility: beds.facility_of(agent.id),
                settings,
                locked: locked[agent.home_ward.slot()],
                workplace,
                workplace_is_education: agent.workplace.is_some_and(|w| pop.sectors[w.sector.0 as usize].is_education),
            };
            let mut rng = key.child(i as u64).stream();
            Some(sample_schedule(&input, p.mobility, &mut rng))
        })
    };
    let schedules: Vec<_> = schedules.into_iter().flatten().collect();
    let in_city = schedules.iter().filter(|s| !s.stops.is_empty()).count();

    // 4. Contacts.
    let ctx = ContactContext {
        day: today,
        key: state.key.path(&[label::CONTACTS, today as u64]),
        params: p.mobility,
        rider_cap: libm::floor(settings.transport_fraction * in_city as f64) as usize,
    };
    let contacts = generate_contacts(&schedules, &pop, &ctx);
    drop(schedules);

    // 5. Transmission. Each healthy agent takes its first success in
    // canonical contact order.
    let mut infected_today = vec![false; n];
    let mut new_cases = Vec::new();
    for c in &contacts {
        let (a, b) = (c.agent_a.index(), c.agent_b.index());
        let (sa, sb) = (&state.states[a], &state.states[b]);
        let (src, dst) = match (sa.is_infectious(today), sb.is_infectious(today)) {
            (true, false) => (c.agent_a, c.agent_b),
            (false, true) => (c.agent_b, c.agent_a),
            _ => continue,
        };
        if state.states[dst.index()].virus != VirusState::Healthy || infected_today[dst.index()] {
            continue;
        }
        let mut rate = p.disease.base_transmission_rate;
        if state.states[src.index()].virus != VirusState::InfectedSymptomatic {
            rate *= p.disease.asymptomatic_infectiousness;
        }
        let sd = if c.setting == Setting::Home { 1.0 } else { settings.sd_factor };
        let prob = exposure_probability(sd * c.distance_m, c.duration_h, rate)?;
        let draw = state
            .key
            .path(&[label::TRANSMISSION, today as u64, c.agent_a.0 as u64, c.agent_b.0 as u64, c.setting as u64])
            .stream()
            .uniform();
        if draw < prob {
            infected_today[dst.index()] = true;
            new_cases.push(InfectionEvent { day: today, source: Some(src), target: dst, setting: Some(c.setting), cause: Cause::Contact });
        }
    }
    state.log.record(today, &contacts);
    drop(contacts);
    for ev in new_cases {
        wards[ward_of(ev.target.index())].new_infections += 1;
        state.infect(ev.target, today, p.disease, ev);
    }

    // 6. Travel. Yesterday's travelers come back, possibly infected; then
    // today's travelers leave for a day.
    let mut returners = Vec::new();
    for i in 0..n {
        let s = &state.states[i];
        if s.mobility == MobilityState::OutOfCity && s.virus != VirusState::Dead && state.mobility_since[i] < today {
            returners.push(AgentId(i as u32));
        }
    }
    for &a in &returners {
        state.set_mobility(a, MobilityState::Free, today);
    }
    returners.retain(|a| state.states[a.index()].virus == VirusState::Healthy);
    let external = external_infection(&returners, settings.external_ifp, state.key.path(&[label::EXTERNAL, today as u64]));
    for a in external {
        wards[ward_of(a.index())].new_infections += 1;
        let ev = InfectionEvent { day: today, source: None, target: a, setting: None, cause: Cause::External };
        state.infect(a, today, p.disease, ev);
    }
    if settings.external_travel && p.mobility.traveler_fraction > 0.0 {
        let key = state.key.path(&[label::TRAVEL, today as u64]);
        for i in 0..n {
            let s = &state.states[i];
            if s.mobility == MobilityState::Free
                && s.virus != VirusState::Dead
                && state.mobility_since[i] < today
                && key.child(i as u64).stream().bernoulli(p.mobility.traveler_fraction)
            {
                state.set_mobility(AgentId(i as u32), MobilityState::OutOfCity, today);
            }
        }
    }

    // 7. Testing, tracing and routing.
    let report_key = state.key.path(&[label::SELF_REPORT, today as u64]);
    for i in 0..n {
        let s = &state.states[i];
        if s.virus == VirusState::InfectedSymptomatic
            && !state.confirmed[i]
            && s.mobility != MobilityState::Hospitalized
            && state.queue.reason(AgentId(i as u32)) != Some(TestReason::Symptomatic)
            && report_key.child(i as u64).stream().bernoulli(p.policy.self_report_probability)
        {
            state.queue.enqueue(AgentId(i as u32), TestReason::Symptomatic);
        }
    }
    let results = crate::policy::run_testing(&mut state.queue, settings.test_capacity, &state.states);
    for (agent, positive) in results {
        let w = ward_of(agent.index());
        wards[w].tests += 1;
        if !positive {
            continue;
        }
        wards[w].positives += 1;
        state.confirmed[agent.index()] = true;
        state.cumulative.positives += 1;
        let home = pop.agents[agent.index()].home_ward;
        let (m, _) = route_case(agent, home, &state.states[agent.index()], p.policy, &mut state.beds);
        state.set_mobility(agent, m, today);
        let mut rng = state.key.path(&[label::TRACING, today as u64, agent.0 as u64]).stream();
        let traced = trace_contacts(agent, &state.log, settings.tracing_efficacy_workplace, settings.tracing_efficacy_transport, &mut rng);
        for t in traced {
            let ts = &state.states[t.index()];
            if ts.virus == VirusState::Dead || state.confirmed[t.index()] {
                continue;
            }
            wards[ward_of(t.index())].traced += 1;
            state.queue.enqueue(t, TestReason::Traced);
            if ts.mobility == MobilityState::Free {
                state.set_mobility(t, MobilityState::Quarantined, today);
            }
        }
    }

    // 8. Containment zones for tomorrow.
    match settings.containment_threshold {
        Some(threshold) => {
            let mut known = vec![0u32; n_wards];
            for i in 0..n {
                if state.confirmed[i] && state.states[i].virus.is_infected() {
                    known[ward_of(i)] += 1;
                }
            }
            let pops: Vec<u32> = pop.wards.iter().map(|w| w.population).collect();
            state.zones = update_containment_zones(&known, &pops, threshold, &state.zones);
        }
        None => state.zones.clear(),
    }

    // 9. Statistics.
    state.beds.check()?;
    let mut census = Census::default();
    for i in 0..n {
        let s = &state.states[i];
        match s.virus {
            VirusState::Healthy => census.healthy += 1,
            VirusState::InfectedSymptomatic | VirusState::InfectedAsymptomatic => {
                census.infected += 1;
                wards[ward_of(i)].active += 1;
            }
            VirusState::Recovered => census.recovered += 1,
            VirusState::Dead => census.dead += 1,
        }
        if state.beds.facility_of(AgentId(i as u32)).is_some() {
            wards[ward_of(i)].hospitalized += 1;
        }
    }
    let mut city = Counts::default();
    for w in &wards {
        city.add(w);
    }
    state.day += 1;
    Ok(DailyStats { day: today, city, wards, census })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub candidate_seed: u64,
    pub initial_infections: u32,
    pub achieved_positive: u64,
    pub active: u32,
    /// Whether the achieved count is within the warmup tolerance.
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub seed: u64,
    pub stats: Vec<DailyStats>,
    pub events: Vec<InfectionEvent>,
    pub warmup: Option<WarmupReport>,
}

impl Replicate {
    pub fn series(&self, f: impl Fn(&Counts) -> u32) -> Vec<u32> {
        self.stats.iter().map(|s| f(&s.city)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub replicates: Vec<Replicate>,
    pub mean: Vec<MeanStats>,
}

impl SimOutput {
    pub fn mean_series(&self, f: impl Fn(&Counts<f64>) -> f64) -> Vec<f64> {
        self.mean.iter().map(|s| f(&s.city)).collect()
    }

    /// Mean total of new infections over the horizon.
    pub fn mean_cumulative_infections(&self) -> f64 {
        self.mean_series(|c| c.new_infections).iter().sum()
    }
}

/// Element-wise average of the replicates' city and ward counts.
pub fn mean_stats(replicates: &[Replicate]) -> Vec<MeanStats> {
    let Some(first) = replicates.first() else { return Vec::new() };
    let r = replicates.len() as f64;
    let avg = |get: &dyn Fn(&Replicate) -> [u32; 8]| {
        let mut acc = [0.0f64; 8];
        for rep in replicates {
            for (a, v) in acc.iter_mut().zip(get(rep)) {
                *a += v as f64;
            }
        }
        Counts::<f64>::from_array(acc.map(|a| a / r))
    };
    (0..first.stats.len())
        .map(|d| MeanStats {
            day: first.stats[d].day,
            city: avg(&|rep| rep.stats[d].city.to_array()),
            wards: (0..first.stats[d].wards.len()).map(|w| avg(&|rep| rep.stats[d].wards[w].to_array())).collect(),
        })
        .collect()
}

/// Index of the candidate closest to `target`; ties go to the earlier one.
pub fn select_nearest(counts: &[u64], target: u64) -> Option<usize> {
    counts.iter().enumerate().min_by_key(|&(i, &c)| (c.abs_diff(target), i)).map(|(i, _)| i)
}

/// Runs every warmup candidate and returns the selected state, positioned
/// at `cfg.start_day`, with its report.
pub fn reverse_seed_init(cfg: &SimConfig, pop: &Arc<Population>, warmup: &Warmup, seed: u64) -> Result<(SimState, WarmupReport)> {
    let p = StepParams::from(cfg);
    if warmup.target_positive == 0 {
        let state = SimState::new(Arc::clone(pop), cfg.start_day, seed, &cfg.policy);
        let report = WarmupReport { candidate_seed: seed, initial_infections: 0, achieved_positive: 0, active: 0, within_tolerance: true };
        return Ok((state, report));
    }
    let base = StreamKey::root(seed).child(label::WARMUP);
    let mut counts = warmup.infection_counts.clone();
    counts.dedup();
    let combos: Vec<(u64, u32)> =
        (0..warmup.candidates as u64).flat_map(|c| counts.iter().map(move |&n| (base.child(c).raw(), n))).collect();
    let runs: Vec<Result<SimState>> = par::map_coarse(combos.len(), |k| {
        let (cand, n) = combos[k];
        let mut st = SimState::new(Arc::clone(pop), warmup.start_day, cand, &cfg.policy);
        seed_infections(&mut st, n, &cfg.disease)?;
        while st.day < cfg.start_day {
            step_day(&mut st, p)?;
        }
        Ok(st)
    });
    let runs: Vec<SimState> = runs.into_iter().collect::<Result<_>>()?;
    let achieved: Vec<u64> = runs.iter().map(|s| s.cumulative.positives).collect();
    let best = select_nearest(&achieved, warmup.target_positive as u64).ok_or_else(|| Error::config("empty warmup search"))?;
    let mut state = runs.into_iter().nth(best).ok_or_else(|| Error::config("empty warmup search"))?;
    let target = warmup.target_positive as f64;
    let report = WarmupReport {
        candidate_seed: combos[best].0,
        initial_infections: combos[best].1,
        achieved_positive: achieved[best],
        active: state.census().infected,
        within_tolerance: (achieved[best] as f64 - target).abs() <= warmup.tolerance * target,
    };
    // Continue on the replicate's own streams so replicates stay distinct.
    state.key = StreamKey::root(seed).child(label::REPLICATE);
    state.seed = seed;
    state.events.clear();
    Ok((state, report))
}

/// Builds the starting state for one replicate: reverse-seeded when a
/// warmup is configured, otherwise `initial_infections` fresh seeds.
pub fn initial_state(cfg: &SimConfig, pop: &Arc<Population>, seed: u64) -> Result<(SimState, Option<WarmupReport>)> {
    let (mut state, report) = match &cfg.warmup {
        Some(w) => {
            let (s, r) = reverse_seed_init(cfg, pop, w, seed)?;
            (s, Some(r))
        }
        None => {
            let mut s = SimState::new(Arc::clone(pop), cfg.start_day, seed, &cfg.policy);
            s.record_events = cfg.record_events;
            seed_infections(&mut s, cfg.initial_infections, &cfg.disease)?;
            (s, None)
        }
    };
    state.record_events = cfg.record_events;
    Ok((state, report))
}

pub fn run_replicate(cfg: &SimConfig, pop: &Arc<Population>, seed: u64) -> Result<Replicate> {
    let (mut state, warmup) = initial_state(cfg, pop, seed)?;
    let p = StepParams::from(cfg);
    let mut stats = Vec::with_capacity(cfg.days as usize);
    for _ in 0..cfg.days {
        stats.push(step_day(&mut state, p)?);
    }
    Ok(Replicate { seed, stats, events: core::mem::take(&mut state.events), warmup })
}

/// One trajectory per seed, plus their mean.
pub fn run(cfg: &SimConfig, pop: &Arc<Population>) -> Result<SimOutput> {
    cfg.validate(pop)?;
    let reps: Vec<Result<Replicate>> = par::map_coarse(cfg.seeds.len(), |i| run_replicate(cfg, pop, cfg.seeds[i]));
    let replicates: Vec<Replicate> = reps.into_iter().collect::<Result<_>>()?;
    let mean = mean_stats(&replicates);
    Ok(SimOutput { replicates, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::DaySettings;
    use crate::population::{synthesize_population, PopulationConfig, SectorRow, SectorTable, WardRow, WardTable};
    use crate::types::{Agent, FamilyId, Occupation, Ward};

    fn small_city(per_ward: u64) -> Arc<Population> {
        let wards = WardTable {
            rows: (1..=4).map(|i| WardRow { id: WardId(i), population: per_ward * i as u64, density: Some(1e4), area: None }).collect(),
        };
        let sectors = SectorTable {
            rows: vec![
                SectorRow { name: "Education".into(), workers: per_ward, centers: vec![4, 2], hours: 6.0, gap_m: 1.0 },
                SectorRow { name: "Healthcare".into(), workers: per_ward / 10, centers: vec![2, 2, 1], hours: 0.0, gap_m: 2.0 },
                SectorRow { name: "Manufacturing".into(), workers: per_ward * 3, centers: vec![20], hours: 8.0, gap_m: 1.5 },
            ],
        };
        Arc::new(synthesize_population(&wards, &sectors, &PopulationConfig::default(), 3).unwrap())
    }

    fn config(days: u32, seeds: Vec<u64>, infections: u32) -> SimConfig {
        SimConfig {
            disease: DiseaseParams { base_transmission_rate: 0.01, ..Default::default() },
            mobility: MobilityParams::default(),
            policy: PolicyParams::default(),
            calendar: PolicyCalendar::constant(days + 1, DaySettings { containment_threshold: Some(0.005), ..Default::default() }),
            start_day: 0,
            days,
            initial_infections: infections,
            seeds,
            record_events: true,
            warmup: None,
        }
    }

    #[test]
    fn zero_days_is_empty() {
        let pop = small_city(200);
        let out = run(&config(0, vec![1], 5), &pop).unwrap();
        assert!(out.mean.is_empty());
        assert!(out.replicates[0].stats.is_empty());
    }

    #[test]
    fn healthy_city_stays_healthy() {
        let pop = small_city(200);
        let mut cfg = config(30, vec![1], 0);
        cfg.calendar.base.external_ifp = 0.0;
        let out = run(&cfg, &pop).unwrap();
        for s in &out.replicates[0].stats {
            assert_eq!(s.city.new_infections, 0);
            assert_eq!(s.census.healthy as usize, pop.len());
        }
    }

    #[test]
    fn same_seed_same_output() {
        let pop = small_city(300);
        let cfg = config(40, vec![7, 8], 10);
        assert_eq!(run(&cfg, &pop).unwrap(), run(&cfg, &pop).unwrap());
    }

    #[test]
    fn mean_is_elementwise_average() {
        let pop = small_city(200);
        let out = run(&config(25, (0..10).collect(), 8), &pop).unwrap();
        for (d, m) in out.mean.iter().enumerate() {
            let want: f64 = out.replicates.iter().map(|r| r.stats[d].city.new_infections as f64).sum::<f64>() / 10.0;
            assert!((m.city.new_infections - want).abs() < 1e-12);
            let ward_sum: f64 = m.wards.iter().map(|w| w.active).sum();
            assert!((ward_sum - m.city.active).abs() < 1e-9);
        }
    }

    #[test]
    fn conservation_and_transitions() {
        let pop = small_city(300);
        let cfg = config(60, vec![3], 20);
        let (mut state, _) = initial_state(&cfg, &pop, 3).unwrap();
        let p = StepParams::from(&cfg);
        let mut prev: Vec<VirusState> = state.states.iter().map(|s| s.virus).collect();
        let mut cum = state.cumulative;
        for _ in 0..cfg.days {
            let stats = step_day(&mut state, p).unwrap();
            assert_eq!(stats.census.total(), pop.len() as u64);
            let mut total = Counts::default();
            for w in &stats.wards {
                total.add(w);
            }
            assert_eq!(total, stats.city);
            for (i, s) in state.states.iter().enumerate() {
                s.validate().unwrap();
                let ok = match (prev[i], s.virus) {
                    (a, b) if a == b => true,
                    (VirusState::Healthy, b) => b.is_infected(),
                    (a, b) if a.is_infected() => b.is_infected() || matches!(b, VirusState::Recovered | VirusState::Dead),
                    _ => false,
                };
                assert!(ok, "agent {i}: {:?} -> {:?}", prev[i], s.virus);
                prev[i] = s.virus;
            }
            let c = state.cumulative;
            assert!(c.infections >= cum.infections && c.recoveries >= cum.recoveries && c.deaths >= cum.deaths);
            cum = c;
            assert!(stats.city.tests <= p.calendar.resolve(stats.day).unwrap().test_capacity);
        }
        assert!(cum.infections > 20, "epidemic never took off");
    }

    #[test]
    fn infections_follow_infectious_contacts() {
        let pop = small_city(300);
        let out = run(&config(40, vec![11], 15), &pop).unwrap();
        let events = &out.replicates[0].events;
        let mut infected_on = vec![None; pop.len()];
        for e in events {
            assert!(infected_on[e.target.index()].is_none(), "double infection");
            if let Some(src) = e.source {
                let d = infected_on[src.index()].expect("source infected earlier");
                assert!(d < e.day);
            }
            infected_on[e.target.index()] = Some(e.day);
        }
    }

    fn lone_agent_city() -> Arc<Population> {
        let mut pop = (*small_city(100)).clone();
        pop.agents.clear();
        pop.families.clear();
        pop.family_wards.clear();
        for w in &mut pop.workplaces {
            w.workers.clear();
            w.visitors.clear();
        }
        for f in &mut pop.facilities {
            f.workers.clear();
        }
        for (i, fam) in [(0u32, 0u32), (1, 1), (2, 1)] {
            pop.agents.push(Agent {
                id: AgentId(i),
                age: 40,
                age_group: 4,
                family: FamilyId(fam),
                home_ward: WardId(1),
                is_citizen: true,
                workplace: None,
                visiting_places: vec![],
                comorbidity: false,
                income_level: 0.0,
                occupation: Occupation::Dependent,
                uses_public_transport: false,
            });
        }
        pop.families = vec![vec![AgentId(0)], vec![AgentId(1), AgentId(2)]];
        pop.family_wards = vec![WardId(1), WardId(1)];
        pop.wards = pop
            .wards
            .iter()
            .map(|w| Ward { population: if w.id == WardId(1) { 3 } else { 0 }, ..w.clone() })
            .collect();
        Arc::new(pop)
    }

    #[test]
    fn isolated_agent_never_transmits() {
        let pop = lone_agent_city();
        let mut cfg = config(60, vec![1], 0);
        cfg.calendar.base = DaySettings { lockdown: crate::Lockdown::CityWide, compliance_rate: 1.0, external_ifp: 0.0, ..Default::default() };
        let mut state = SimState::new(Arc::clone(&pop), 0, 1, &cfg.policy);
        let ev = InfectionEvent { day: 0, source: None, target: AgentId(0), setting: None, cause: Cause::Seed };
        state.infect(AgentId(0), 0, &cfg.disease, ev);
        for _ in 0..60 {
            step_day(&mut state, StepParams::from(&cfg)).unwrap();
        }
        assert_eq!(state.states[1].virus, VirusState::Healthy);
        assert_eq!(state.states[2].virus, VirusState::Healthy);
        assert!(matches!(state.states[0].virus, VirusState::Recovered | VirusState::Dead));
        assert_eq!(state.cumulative.recoveries + state.cumulative.deaths, 1);
    }

    /// Two-person household, 24 hours at 1 m: the daily infection chance is
    /// the closed form `1 - exp(-24 β)`.
    #[test]
    fn household_transmission_matches_closed_form() {
        let pop = lone_agent_city();
        let beta = 0.01;
        let mut cfg = config(2, vec![1], 0);
        cfg.disease.base_transmission_rate = beta;
        cfg.disease.beta_a = 50.0;
        cfg.disease.beta_b = 1.0; // symptomatic, full infectiousness
        cfg.disease.incubation_days = 0;
        cfg.calendar.base = DaySettings { lockdown: crate::Lockdown::CityWide, compliance_rate: 1.0, external_ifp: 0.0, test_capacity: 0, ..Default::default() };
        let reps = 10_000u64;
        let mut hits = 0u64;
        for r in 0..reps {
            let mut state = SimState::new(Arc::clone(&pop), 0, r, &cfg.policy);
            let ev = InfectionEvent { day: 0, source: None, target: AgentId(1), setting: None, cause: Cause::Seed };
            state.infect(AgentId(1), 0, &cfg.disease, ev);
            state.day = 1;
            let s = step_day(&mut state, StepParams::from(&cfg)).unwrap();
            hits += s.city.new_infections as u64;
        }
        let p = -libm::expm1(-24.0 * beta);
        let rate = hits as f64 / reps as f64;
        let se = libm::sqrt(p * (1.0 - p) / reps as f64);
        assert!((rate - p).abs() < 3.0 * se, "rate {rate} vs {p}");
    }

    #[test]
    fn seeding_limits() {
        let pop = small_city(100);
        let mut st = SimState::new(Arc::clone(&pop), 0, 1, &PolicyParams::default());
        assert!(seed_infections(&mut st, 0, &DiseaseParams::default()).unwrap().is_empty());
        let n = pop.len() as u32;
        assert!(matches!(seed_infections(&mut st, n + 1, &DiseaseParams::default()), Err(Error::TooManySeeds { .. })));
        assert_eq!(seed_infections(&mut st, n, &DiseaseParams::default()).unwrap().len(), n as usize);
        assert_eq!(st.census().infected, n);
    }

    #[test]
    fn nearest_candidate_selection() {
        assert_eq!(select_nearest(&[640, 700], 651), Some(0));
        assert_eq!(select_nearest(&[700, 640], 651), Some(1));
        assert_eq!(select_nearest(&[640, 662], 651), Some(0));
        assert_eq!(select_nearest(&[], 651), None);
    }

    #[test]
    fn zero_target_warmup_is_all_healthy() {
        let pop = small_city(100);
        let mut cfg = config(5, vec![1], 0);
        cfg.start_day = 3;
        cfg.calendar.days = 10;
        let w = Warmup { start_day: 0, target_positive: 0, infection_counts: vec![1, 2], candidates: 2, tolerance: 0.1 };
        let (state, report) = reverse_seed_init(&cfg, &pop, &w, 4).unwrap();
        assert_eq!(state.census().healthy as usize, pop.len());
        assert_eq!(state.day, 3);
        assert_eq!(report.achieved_positive, 0);
    }
}
