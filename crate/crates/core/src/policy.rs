//! Testing, contact tracing, case routing, hospital beds and containment
//! zones. Everything here runs in the serialized policy phase of a day.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::mobility::{Contact, Setting};
use crate::rng::Stream;
use crate::types::{AgentId, Day, DiseaseState, FacilityId, FacilityKind, HealthcareFacility, MobilityState, VirusState, WardId};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    /// Daily chance that a symptomatic, untested agent asks for a test.
    pub self_report_probability: f64,
    pub quarantine_days: u32,
    /// Viral load at or above which a symptomatic positive needs a bed.
    pub hospitalization_threshold: f64,
    /// Days of contact history kept for tracing.
    pub trace_window_days: u32,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            self_report_probability: 0.8,
            quarantine_days: 14,
            hospitalization_threshold: 0.7,
            trace_window_days: 14,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.self_report_probability) {
            return Err(Error::config("self_report_probability must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.hospitalization_threshold) {
            return Err(Error::config("hospitalization_threshold must lie in [0, 1]"));
        }
        if self.trace_window_days == 0 {
            return Err(Error::config("trace_window_days must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestReason {
    Symptomatic,
    Traced,
}

const NOT_QUEUED: u8 = 0;
const QUEUED_TRACED: u8 = 1;
const QUEUED_SYMPTOMATIC: u8 = 2;

/// Agents waiting for a test. Symptomatic requests go first, then traced
/// contacts; each class is first-in first-out. An agent is queued at most
/// once, and a traced agent who develops symptoms moves up.
#[derive(Debug, Clone, Default)]
pub struct TestQueue {
    status: Vec<u8>,
    symptomatic: VecDeque<AgentId>,
    traced: VecDeque<AgentId>,
    len: usize,
}

impl TestQueue {
    pub fn new(agents: usize) -> Self {
        TestQueue { status: alloc::vec![NOT_QUEUED; agents], ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn reason(&self, agent: AgentId) -> Option<TestReason> {
        match self.status[agent.index()] {
            QUEUED_SYMPTOMATIC => Some(TestReason::Symptomatic),
            QUEUED_TRACED => Some(TestReason::Traced),
            _ => None,
        }
    }

    /// Returns whether the queue changed.
    pub fn enqueue(&mut self, agent: AgentId, reason: TestReason) -> bool {
        let slot = &mut self.status[agent.index()];
        match (*slot, reason) {
            (NOT_QUEUED, TestReason::Traced) => {
                *slot = QUEUED_TRACED;
                self.traced.push_back(agent);
                self.len += 1;
                true
            }
            (NOT_QUEUED | QUEUED_TRACED, TestReason::Symptomatic) => {
                // An upgraded entry leaves a stale copy in `traced`, skipped on pop.
                if *slot == NOT_QUEUED {
                    self.len += 1;
                }
                *slot = QUEUED_SYMPTOMATIC;
                self.symptomatic.push_back(agent);
                true
            }
            _ => false,
        }
    }

    /// Drops an agent from the queue, e.g. on death.
    pub fn remove(&mut self, agent: AgentId) {
        if self.status[agent.index()] != NOT_QUEUED {
            self.status[agent.index()] = NOT_QUEUED;
            self.len -= 1;
        }
    }

    pub fn pop(&mut self) -> Option<(AgentId, TestReason)> {
        while let Some(a) = self.symptomatic.pop_front() {
            if self.status[a.index()] == QUEUED_SYMPTOMATIC {
                self.status[a.index()] = NOT_QUEUED;
                self.len -= 1;
                return Some((a, TestReason::Symptomatic));
            }
        }
        while let Some(a) = self.traced.pop_front() {
            if self.status[a.index()] == QUEUED_TRACED {
                self.status[a.index()] = NOT_QUEUED;
                self.len -= 1;
                return Some((a, TestReason::Traced));
            }
        }
        None
    }
}

/// Tests up to `capacity` queued agents. Tests are perfect: positive exactly
/// when the agent is infected.
pub fn run_testing(queue: &mut TestQueue, capacity: u32, states: &[DiseaseState]) -> Vec<(AgentId, bool)> {
    let mut out = Vec::new();
    while out.len() < capacity as usize {
        let Some((agent, _)) = queue.pop() else { break };
        out.push((agent, states[agent.index()].virus.is_infected()));
    }
    out
}

const SETTING_BITS: u32 = 3;

fn setting_code(s: Setting) -> u32 {
    match s {
        Setting::Home => 0,
        Setting::Workplace => 1,
        Setting::School => 2,
        Setting::Transport => 3,
        Setting::Visit => 4,
        Setting::Healthcare => 5,
    }
}

fn setting_from_code(c: u32) -> Setting {
    match c {
        0 => Setting::Home,
        1 => Setting::Workplace,
        2 => Setting::School,
        3 => Setting::Transport,
        4 => Setting::Visit,
        _ => Setting::Healthcare,
    }
}

/// Whether contacts in this setting can be traced and are therefore logged.
pub fn is_traceable(s: Setting) -> bool {
    matches!(s, Setting::Home | Setting::Workplace | Setting::School | Setting::Transport)
}

#[derive(Debug, Clone, Default)]
struct DayLog {
    day: Day,
    offsets: Vec<u32>,
    entries: Vec<u32>,
}

/// Per-agent contact history over the last `window` days. Only traceable
/// settings are kept.
#[derive(Debug, Clone)]
pub struct ContactLog {
    agents: usize,
    window: u32,
    days: VecDeque<DayLog>,
}

impl ContactLog {
    pub fn new(agents: usize, window: u32) -> Self {
        assert!(agents < (1usize << (32 - SETTING_BITS)), "too many agents for the packed contact log");
        ContactLog { agents, window, days: VecDeque::new() }
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    /// Appends `day`'s contacts and evicts days older than the window.
    pub fn record(&mut self, day: Day, contacts: &[Contact]) {
        let mut log = if self.days.len() as u32 >= self.window {
            self.days.pop_front().unwrap_or_default()
        } else {
            DayLog::default()
        };
        log.day = day;
        log.offsets.clear();
        log.offsets.resize(self.agents + 1, 0);
        let kept = || contacts.iter().filter(|c| is_traceable(c.setting));
        for c in kept() {
            log.offsets[c.agent_a.index() + 1] += 1;
            log.offsets[c.agent_b.index() + 1] += 1;
        }
        for i in 0..self.agents {
            log.offsets[i + 1] += log.offsets[i];
        }
        log.entries.clear();
        log.entries.resize(log.offsets[self.agents] as usize, 0);
        let mut fill: Vec<u32> = log.offsets[..self.agents].to_vec();
        for c in kept() {
            let code = setting_code(c.setting);
            for (me, other) in [(c.agent_a, c.agent_b), (c.agent_b, c.agent_a)] {
                let at = &mut fill[me.index()];
                log.entries[*at as usize] = (other.0 << SETTING_BITS) | code;
                *at += 1;
            }
        }
        self.days.push_back(log);
        while self.days.front().is_some_and(|d| d.day + self.window <= day) {
            self.days.pop_front();
        }
    }

    /// Logged contacts of `agent`, oldest day first.
    pub fn contacts_of(&self, agent: AgentId) -> impl Iterator<Item = (Day, AgentId, Setting)> + '_ {
        self.days.iter().flat_map(move |d| {
            let (lo, hi) = (d.offsets[agent.index()] as usize, d.offsets[agent.index() + 1] as usize);
            d.entries[lo..hi]
                .iter()
                .map(move |&e| (d.day, AgentId(e >> SETTING_BITS), setting_from_code(e & ((1 << SETTING_BITS) - 1))))
        })
    }

    pub fn oldest_day(&self) -> Option<Day> {
        self.days.front().map(|d| d.day)
    }
}

/// Finds the contacts of a confirmed case. Household contacts are always
/// found; workplace and school contacts with probability `eff_work`, and
/// transport contacts with `eff_transport`, one draw per logged contact.
/// Returns sorted, distinct agents, never the case itself.
pub fn trace_contacts(positive: AgentId, log: &ContactLog, eff_work: f64, eff_transport: f64, rng: &mut Stream) -> Vec<AgentId> {
    let mut found: Vec<AgentId> = log
        .contacts_of(positive)
        .filter(|&(_, _, setting)| match setting {
            Setting::Home => true,
            Setting::Workplace | Setting::School => rng.bernoulli(eff_work),
            Setting::Transport => rng.bernoulli(eff_transport),
            Setting::Visit | Setting::Healthcare => false,
        })
        .map(|(_, other, _)| other)
        .filter(|&o| o != positive)
        .collect();
    found.sort_unstable();
    found.dedup();
    found
}

/// Occupancy of every facility and the bed each patient holds.
#[derive(Debug, Clone)]
pub struct BedLedger {
    capacity: Vec<u32>,
    occupancy: Vec<u32>,
    kind: Vec<FacilityKind>,
    ward: Vec<WardId>,
    held: Vec<Option<FacilityId>>,
}

impl BedLedger {
    pub fn new(facilities: &[HealthcareFacility], agents: usize) -> Self {
        BedLedger {
            capacity: facilities.iter().map(|f| f.beds).collect(),
            occupancy: facilities.iter().map(|f| f.occupancy_count).collect(),
            kind: facilities.iter().map(|f| f.kind).collect(),
            ward: facilities.iter().map(|f| f.ward).collect(),
            held: alloc::vec![None; agents],
        }
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.occupancy
    }

    pub fn capacity(&self) -> &[u32] {
        &self.capacity
    }

    pub fn facility_of(&self, agent: AgentId) -> Option<FacilityId> {
        self.held[agent.index()]
    }

    pub fn census(&self) -> u32 {
        self.occupancy.iter().sum()
    }

    /// Finds a free bed, preferring COVID hospitals and then the patient's
    /// own ward, and books it.
    pub fn admit(&mut self, agent: AgentId, home: WardId) -> Option<FacilityId> {
        if let Some(f) = self.held[agent.index()] {
            return Some(f);
        }
        let free = |i: usize| self.occupancy[i] < self.capacity[i];
        let n = self.capacity.len();
        let pick = [(true, true), (true, false), (false, true), (false, false)].into_iter().find_map(|(hospital, local)| {
            (0..n).find(|&i| {
                free(i) && (self.kind[i] == FacilityKind::CovidHospital) == hospital && (self.ward[i] == home) == local
            })
        })?;
        self.occupancy[pick] += 1;
        let id = FacilityId(pick as u32);
        self.held[agent.index()] = Some(id);
        Some(id)
    }

    pub fn release(&mut self, agent: AgentId) {
        if let Some(f) = self.held[agent.index()].take() {
            self.occupancy[f.index()] -= 1;
        }
    }

    pub fn check(&self) -> Result<()> {
        for (i, (&o, &c)) in self.occupancy.iter().zip(&self.capacity).enumerate() {
            if o > c {
                return Err(Error::invariant(alloc::format!("facility {i} holds {o} patients in {c} beds")));
            }
        }
        Ok(())
    }
}

/// Where a freshly confirmed case goes. Returns the new mobility state and
/// the facility for hospitalised agents.
pub fn route_case(
    agent: AgentId,
    home: WardId,
    state: &DiseaseState,
    params: &PolicyParams,
    beds: &mut BedLedger,
) -> (MobilityState, Option<FacilityId>) {
    match state.virus {
        VirusState::InfectedSymptomatic => {
            if state.viral_load.unwrap_or(0.0) >= params.hospitalization_threshold {
                if let Some(f) = beds.admit(agent, home) {
                    return (MobilityState::Hospitalized, Some(f));
                }
            }
            (MobilityState::Isolated, None)
        }
        _ => (MobilityState::Quarantined, None),
    }
}

/// Recomputes the containment list. A ward enters when its known active
/// cases per capita reach `threshold` and leaves once they fall below half
/// of it. `active` and `population` are indexed by ward slot.
pub fn update_containment_zones(active: &[u32], population: &[u32], threshold: f64, current: &[WardId]) -> Vec<WardId> {
    let mut out = Vec::new();
    for (slot, (&cases, &pop)) in active.iter().zip(population).enumerate() {
        let ward = WardId(slot as u16 + 1);
        let rate = if pop == 0 { 0.0 } else { cases as f64 / pop as f64 };
        let was = current.binary_search(&ward).is_ok();
        if rate >= threshold || (was && rate >= threshold / 2.0) {
            out.push(ward);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use crate::types::Payment;
    use alloc::vec;

    fn infected(symptomatic: bool, load: f64) -> DiseaseState {
        DiseaseState {
            virus: if symptomatic { VirusState::InfectedSymptomatic } else { VirusState::InfectedAsymptomatic },
            infected_on: Some(0),
            viral_load: Some(load),
            ..DiseaseState::healthy()
        }
    }

    #[test]
    fn zero_capacity_runs_no_tests() {
        let mut q = TestQueue::new(4);
        q.enqueue(AgentId(1), TestReason::Symptomatic);
        assert!(run_testing(&mut q, 0, &[DiseaseState::healthy(); 4]).is_empty());
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn perfect_tests_find_every_infection() {
        let states: Vec<DiseaseState> = (0..5).map(|_| infected(true, 0.5)).collect();
        let mut q = TestQueue::new(5);
        for i in 0..5 {
            q.enqueue(AgentId(i), TestReason::Symptomatic);
        }
        let r = run_testing(&mut q, 10, &states);
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|&(_, pos)| pos));
    }

    #[test]
    fn symptomatic_requests_jump_the_queue() {
        // 12 traced agents arrive first, interleaved with 8 symptomatic ones.
        let mut q = TestQueue::new(20);
        let mut sym = Vec::new();
        for i in 0..20u32 {
            let reason = if i % 5 < 2 { TestReason::Symptomatic } else { TestReason::Traced };
            if reason == TestReason::Symptomatic {
                sym.push(AgentId(i));
            }
            q.enqueue(AgentId(i), reason);
        }
        assert_eq!(sym.len(), 8);
        let tested: Vec<AgentId> = run_testing(&mut q, 8, &[DiseaseState::healthy(); 20]).into_iter().map(|r| r.0).collect();
        assert_eq!(tested, sym);
        assert_eq!(q.len(), 12);
    }

    #[test]
    fn queue_rejects_duplicates_and_upgrades() {
        let mut q = TestQueue::new(3);
        assert!(q.enqueue(AgentId(0), TestReason::Traced));
        assert!(!q.enqueue(AgentId(0), TestReason::Traced));
        assert!(q.enqueue(AgentId(1), TestReason::Traced));
        assert!(q.enqueue(AgentId(1), TestReason::Symptomatic));
        assert!(!q.enqueue(AgentId(1), TestReason::Traced));
        assert_eq!(q.len(), 2);
        assert_eq!(q.pop(), Some((AgentId(1), TestReason::Symptomatic)));
        assert_eq!(q.pop(), Some((AgentId(0), TestReason::Traced)));
        assert_eq!(q.pop(), None);
        assert!(q.is_empty());
    }

    fn contact(a: u32, b: u32, setting: Setting, day: Day) -> Contact {
        Contact { agent_a: AgentId(a), agent_b: AgentId(b), setting, duration_h: 1.0, distance_m: 1.0, day }
    }

    fn sample_log() -> ContactLog {
        let mut log = ContactLog::new(10, 14);
        log.record(
            0,
            &[
                contact(0, 1, Setting::Home, 0),
                contact(0, 2, Setting::Workplace, 0),
                contact(0, 3, Setting::Transport, 0),
                contact(0, 4, Setting::Visit, 0),
                contact(5, 6, Setting::Workplace, 0),
            ],
        );
        log
    }

    #[test]
    fn full_efficacy_traces_every_logged_contact() {
        let log = sample_log();
        let t = trace_contacts(AgentId(0), &log, 1.0, 1.0, &mut Stream::from_seed(1));
        assert_eq!(t, vec![AgentId(1), AgentId(2), AgentId(3)]);
    }

    #[test]
    fn zero_efficacy_traces_only_household() {
        let log = sample_log();
        let t = trace_contacts(AgentId(0), &log, 0.0, 0.0, &mut Stream::from_seed(1));
        assert_eq!(t, vec![AgentId(1)]);
        assert!(trace_contacts(AgentId(7), &log, 1.0, 1.0, &mut Stream::from_seed(1)).is_empty());
    }

    #[test]
    fn log_forgets_days_outside_the_window() {
        let mut log = ContactLog::new(3, 14);
        for day in 0..30 {
            log.record(day, &[contact(0, 1, Setting::Home, day)]);
        }
        assert_eq!(log.oldest_day(), Some(16));
        assert!(log.contacts_of(AgentId(0)).all(|(d, _, _)| d > 29 - 14));
        assert_eq!(log.contacts_of(AgentId(1)).count(), 14);
    }

    #[test]
    fn workplace_tracing_rate() {
        let n = 10_001u32;
        let mut log = ContactLog::new(n as usize, 14);
        let contacts: Vec<Contact> = (1..n).map(|b| contact(0, b, Setting::Workplace, 0)).collect();
        log.record(0, &contacts);
        let reps = 20;
        let mut total = 0usize;
        for r in 0..reps {
            total += trace_contacts(AgentId(0), &log, 0.6, 0.3, &mut StreamKey::root(r).stream()).len();
        }
        let frac = total as f64 / (reps as f64 * 10_000.0);
        assert!((frac - 0.6).abs() / 0.6 < 0.02, "fraction {frac}");
    }

    fn facility(id: u32, kind: FacilityKind, ward: u16, beds: u32) -> HealthcareFacility {
        HealthcareFacility {
            id: FacilityId(id),
            workplace: crate::types::WorkplaceId(id),
            kind,
            ward: WardId(ward),
            beds,
            icu_beds: 0,
            ventilators: 0,
            workers: vec![],
            payment: Payment::Free,
            occupancy_count: 0,
        }
    }

    #[test]
    fn routing_rules() {
        let fac = [facility(0, FacilityKind::HealthcareCentre, 1, 1), facility(1, FacilityKind::CovidHospital, 2, 1)];
        let mut beds = BedLedger::new(&fac, 4);
        let p = PolicyParams::default();
        assert_eq!(route_case(AgentId(0), WardId(1), &infected(false, 0.9), &p, &mut beds).0, MobilityState::Quarantined);
        assert_eq!(route_case(AgentId(0), WardId(1), &infected(true, 0.5), &p, &mut beds).0, MobilityState::Isolated);
        // Hospitals come first even out of ward.
        assert_eq!(route_case(AgentId(1), WardId(1), &infected(true, 0.9), &p, &mut beds), (MobilityState::Hospitalized, Some(FacilityId(1))));
        assert_eq!(beds.occupancy(), &[0, 1]);
        assert_eq!(route_case(AgentId(2), WardId(1), &infected(true, 0.9), &p, &mut beds), (MobilityState::Hospitalized, Some(FacilityId(0))));
        assert_eq!(route_case(AgentId(3), WardId(1), &infected(true, 0.9), &p, &mut beds).0, MobilityState::Isolated);
        beds.check().unwrap();
        beds.release(AgentId(1));
        beds.release(AgentId(1));
        assert_eq!(beds.census(), 1);
    }

    #[test]
    fn containment_basics() {
        assert!(update_containment_zones(&[0, 0, 0], &[100, 100, 100], 0.01, &[]).is_empty());
        assert_eq!(update_containment_zones(&[0, 2, 0], &[100, 100, 100], 0.01, &[]), vec![WardId(2)]);
    }

    /// Hand-written automaton: in ↔ out with enter at ≥ t and exit at < t/2.
    #[test]
    fn containment_hysteresis_does_not_flap() {
        let t = 0.01;
        let pop = 10_000u32;
        // Cases oscillate just around the threshold: 99, 101, 99, 101, ...
        let mut zones = Vec::new();
        let mut flips = 0;
        let mut was_in = false;
        for day in 0..40 {
            let cases = if day % 2 == 0 { 99 } else { 101 };
            zones = update_containment_zones(&[cases], &[pop], t, &zones);
            let is_in = !zones.is_empty();
            if is_in != was_in {
                flips += 1;
            }
            was_in = is_in;
        }
        assert_eq!(flips, 1);
        assert!(was_in);
        // Dropping below half the threshold releases the ward.
        zones = update_containment_zones(&[49], &[pop], t, &zones);
        assert!(zones.is_empty());
    }
}
