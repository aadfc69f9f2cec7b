//! Daily schedules and the contacts they produce.
//!
//! Every alive agent gets a [`DailySchedule`] from its mobility state, the
//! day's policy and a compliance draw. Co-located agents then meet:
//! families at home, a sampled subset of co-workers at work or school,
//! fellow riders in transport vehicles, patients with facility staff, and
//! visitors with people present at the place they visit.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::calendar::DaySettings;
use crate::par;
use crate::population::Population;
use crate::rng::{Stream, StreamKey};
use crate::types::{Agent, AgentId, Day, FacilityId, FamilyId, MobilityState, WardId, Workplace, WorkplaceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Home,
    Workplace,
    School,
    Transport,
    Visit,
    Healthcare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Place {
    Home(FamilyId),
    /// A room of one's own; isolating agents meet nobody.
    Room(AgentId),
    Workplace(WorkplaceId),
    Facility(FacilityId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub place: Place,
    pub setting: Setting,
    pub hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySchedule {
    pub agent: AgentId,
    pub stops: SmallVec<[Stop; 4]>,
    pub used_transport: bool,
}

impl DailySchedule {
    fn hours_at(&self, setting: Setting) -> f64 {
        self.stops.iter().filter(|s| s.setting == setting).map(|s| s.hours).sum()
    }

    pub fn total_hours(&self) -> f64 {
        self.stops.iter().map(|s| s.hours).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub agent_a: AgentId,
    pub agent_b: AgentId,
    pub setting: Setting,
    pub duration_h: f64,
    pub distance_m: f64,
    pub day: Day,
}

impl Contact {
    fn new(a: AgentId, b: AgentId, setting: Setting, duration_h: f64, distance_m: f64, day: Day) -> Self {
        let (agent_a, agent_b) = if a < b { (a, b) } else { (b, a) };
        Contact { agent_a, agent_b, setting, duration_h: duration_h.min(24.0), distance_m, day }
    }

    #[cfg(test)]
    fn sort_key(&self) -> (Day, AgentId, AgentId, Setting) {
        (self.day, self.agent_a, self.agent_b, self.setting)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityParams {
    /// Co-attendees each worker or student meets.
    pub contacts_per_workplace: usize,
    /// People a visitor meets at the visited place.
    pub contacts_per_visit: usize,
    /// Staff a hospitalised patient meets per day.
    pub contacts_per_patient: usize,
    pub household_distance_m: f64,
    pub commute_hours: f64,
    pub transport_distance_m: f64,
    pub vehicle_capacity: usize,
    pub visit_probability: f64,
    pub visit_hours: f64,
    /// Pre-pandemic share of the population riding public transport.
    pub transport_baseline: f64,
    /// Share of free agents leaving the city on a given day.
    pub traveler_fraction: f64,
    /// Scale visit contacts by the ward's density relative to the city.
    pub visit_density_scaling: bool,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            contacts_per_workplace: 10,
            contacts_per_visit: 5,
            contacts_per_patient: 3,
            household_distance_m: 1.0,
            commute_hours: 1.0,
            transport_distance_m: 0.5,
            vehicle_capacity: 60,
            visit_probability: 0.2,
            visit_hours: 1.0,
            transport_baseline: 0.17,
            traveler_fraction: 0.001,
            visit_density_scaling: true,
        }
    }
}

impl MobilityParams {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if !(self.household_distance_m > 0.0 && self.transport_distance_m > 0.0) {
            return Err(Error::config("contact distances must be positive"));
        }
        if self.vehicle_capacity < 1 {
            return Err(Error::config("vehicle_capacity must be at least 1"));
        }
        for (name, v) in [("visit_probability", self.visit_probability), ("traveler_fraction", self.traveler_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(alloc::format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.transport_baseline > 0.0 && self.transport_baseline <= 1.0) {
            return Err(Error::config("transport_baseline must lie in (0, 1]"));
        }
        let hours = self.commute_hours + self.visit_hours;
        if !(self.commute_hours >= 0.0 && self.visit_hours >= 0.0 && hours <= 12.0) {
            return Err(Error::config("commute and visit hours must be non-negative and modest"));
        }
        Ok(())
    }
}

pub fn draw_compliance(compliance_rate: f64, rng: &mut Stream) -> bool {
    rng.bernoulli(compliance_rate)
}

/// Everything [`sample_schedule`] needs to know about one agent's day.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleInput<'a> {
    pub agent: &'a Agent,
    pub mobility: MobilityState,
    /// Facility holding a hospitalised agent.
    pub facility: Option<FacilityId>,
    pub settings: &'a DaySettings,
    /// Whether a city-wide, ward or containment lockdown covers the agent's home ward.
    pub locked: bool,
    pub workplace: Option<&'a Workplace>,
    pub workplace_is_education: bool,
}

fn home_day(agent: &Agent) -> DailySchedule {
    let mut stops = SmallVec::new();
    stops.push(Stop { place: Place::Home(agent.family), setting: Setting::Home, hours: 24.0 });
    DailySchedule { agent: agent.id, stops, used_transport: false }
}

pub fn sample_schedule(input: &ScheduleInput<'_>, params: &MobilityParams, rng: &mut Stream) -> DailySchedule {
    let agent = input.agent;
    match input.mobility {
        MobilityState::Hospitalized => {
            let mut stops = SmallVec::new();
            if let Some(f) = input.facility {
                stops.push(Stop { place: Place::Facility(f), setting: Setting::Healthcare, hours: 24.0 });
            }
            return DailySchedule { agent: agent.id, stops, used_transport: false };
        }
        MobilityState::Isolated => {
            let mut stops = SmallVec::new();
            stops.push(Stop { place: Place::Room(agent.id), setting: Setting::Home, hours: 24.0 });
            return DailySchedule { agent: agent.id, stops, used_transport: false };
        }
        MobilityState::Quarantined => return home_day(agent),
        MobilityState::OutOfCity => {
            return DailySchedule { agent: agent.id, stops: SmallVec::new(), used_transport: false };
        }
        MobilityState::Free => {}
    }

    // Draw order is part of the determinism contract.
    let compliant = draw_compliance(input.settings.compliance_rate, rng);
    let ride_draw = rng.uniform();
    let visit_draw = rng.uniform();
    let restricted = input.locked && compliant;

    let mut away: SmallVec<[Stop; 4]> = SmallVec::new();
    let mut used_transport = false;
    if let Some(wp) = input.workplace {
        let attends = if input.workplace_is_education {
            !input.settings.education_closed
        } else {
            !restricted || wp.is_essential
        };
        if attends && wp.working_hours > 0.0 {
            let setting = if input.workplace_is_education { Setting::School } else { Setting::Workplace };
            away.push(Stop { place: Place::Workplace(wp.id), setting, hours: wp.working_hours });
            let ride_p = (input.settings.transport_fraction / params.transport_baseline).min(1.0);
            used_transport = agent.uses_public_transport && !restricted && ride_draw < ride_p;
        }
    }
    if !restricted && !agent.visiting_places.is_empty() && visit_draw < params.visit_probability {
        let place = agent.visiting_places[rng.below(agent.visiting_places.len() as u64) as usize];
        away.push(Stop { place: Place::Workplace(place), setting: Setting::Visit, hours: params.visit_hours });
    }

    let mut busy: f64 = away.iter().map(|s| s.hours).sum();
    if used_transport {
        busy += params.commute_hours;
    }
    if busy > 24.0 {
        // Long shifts eat into the visit first.
        away.retain(|s| s.setting != Setting::Visit);
        busy = away.iter().map(|s| s.hours).sum::<f64>() + if used_transport { params.commute_hours } else { 0.0 };
    }
    let home = (24.0 - busy).max(0.0);
    let mut stops = SmallVec::new();
    let home_place = Place::Home(agent.family);
    stops.push(Stop { place: home_place, setting: Setting::Home, hours: home / 2.0 });
    stops.extend(away);
    stops.push(Stop { place: home_place, setting: Setting::Home, hours: home / 2.0 });
    DailySchedule { agent: agent.id, stops, used_transport }
}

/// Inputs shared by all contact-generation groups on one day.
#[derive(Debug, Clone, Copy)]
pub struct ContactContext<'a> {
    pub day: Day,
    /// Day-level key; groups derive their own substreams from it.
    pub key: StreamKey,
    pub params: &'a MobilityParams,
    /// Maximum riders today.
    pub rider_cap: usize,
}

const GROUP_WORK: u64 = 1;
const GROUP_TRANSPORT: u64 = 2;
const GROUP_VISIT: u64 = 3;
const GROUP_CARE: u64 = 4;

fn runs<T, K: PartialEq>(items: &[T], key: impl Fn(&T) -> K) -> Vec<core::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || key(&items[i]) != key(&items[start]) {
            if start < items.len() {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

fn sampled_pairs(
    members: &[(AgentId, f64)],
    k: usize,
    rng: &mut Stream,
    mut emit: impl FnMut(AgentId, AgentId, f64),
) {
    let n = members.len();
    if n < 2 {
        return;
    }
    let mut picks = Vec::with_capacity(k);
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n * k.min(n - 1));
    for i in 0..n {
        rng.sample_distinct(n, k, Some(i), &mut picks);
        pairs.extend(picks.iter().map(|&j| (i.min(j), i.max(j))));
    }
    pairs.sort_unstable();
    pairs.dedup();
    for (i, j) in pairs {
        emit(members[i].0, members[j].0, members[i].1.min(members[j].1));
    }
}

/// Generates the day's contacts with `agent_a < agent_b`, each
/// `(agent_a, agent_b, setting)` at most once. The order is canonical:
/// setting groups in a fixed sequence, groups by place id, pairs sorted
/// within a group.
pub fn generate_contacts(schedules: &[DailySchedule], pop: &Population, ctx: &ContactContext<'_>) -> Vec<Contact> {
    let p = ctx.params;
    let day = ctx.day;
    let mut homes: Vec<(FamilyId, AgentId, f64)> = Vec::new();
    let mut attendees: Vec<(WorkplaceId, AgentId, f64, Setting)> = Vec::new();
    let mut visitors: Vec<(WorkplaceId, AgentId)> = Vec::new();
    let mut patients: Vec<(FacilityId, AgentId)> = Vec::new();
    let mut riders: Vec<AgentId> = Vec::new();
    for s in schedules {
        let home_hours = s.hours_at(Setting::Home);
        let mut at_home = None;
        for stop in &s.stops {
            match (stop.place, stop.setting) {
                (Place::Home(f), Setting::Home) => at_home = Some(f),
                (Place::Workplace(w), Setting::Workplace | Setting::School) => {
                    attendees.push((w, s.agent, stop.hours, stop.setting))
                }
                (Place::Workplace(w), Setting::Visit) => visitors.push((w, s.agent)),
                (Place::Facility(f), Setting::Healthcare) => patients.push((f, s.agent)),
                _ => {}
            }
        }
        if let Some(f) = at_home {
            homes.push((f, s.agent, home_hours));
        }
        if s.used_transport {
            riders.push(s.agent);
        }
    }
    homes.sort_unstable_by_key(|h| (h.0, h.1));
    attendees.sort_unstable_by_key(|a| (a.0, a.1));
    visitors.sort_unstable_by_key(|v| (v.0, v.1));
    patients.sort_unstable_by_key(|v| (v.0, v.1));
    riders.sort_unstable();

    let home_pairs: usize = runs(&homes, |h| h.0).iter().map(|r| r.len() * (r.len() - 1) / 2).sum();
    let riding = riders.len().min(ctx.rider_cap);
    let bound = home_pairs
        + attendees.len() * p.contacts_per_workplace
        + visitors.len() * 4 * p.contacts_per_visit.max(1)
        + patients.len() * p.contacts_per_patient
        + riding * p.vehicle_capacity.saturating_sub(1) / 2;
    let mut contacts: Vec<Contact> = Vec::with_capacity(bound);

    for r in runs(&homes, |h| h.0) {
        let g = &homes[r];
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                let hours = g[i].2.min(g[j].2);
                contacts.push(Contact::new(g[i].1, g[j].1, Setting::Home, hours, p.household_distance_m, day));
            }
        }
    }

    let work_groups = runs(&attendees, |a| a.0);
    let per_group = par::map_range(work_groups.len(), |gi| {
        let g = &attendees[work_groups[gi].clone()];
        let wp = &pop.workplaces[g[0].0.index()];
        let setting = g[0].3;
        let members: Vec<(AgentId, f64)> = g.iter().map(|a| (a.1, a.2)).collect();
        let mut rng = ctx.key.path(&[GROUP_WORK, wp.id.0 as u64]).stream();
        let mut out = Vec::new();
        sampled_pairs(&members, p.contacts_per_workplace, &mut rng, |a, b, h| {
            out.push(Contact::new(a, b, setting, h, wp.physical_gap, day))
        });
        out
    });
    for g in per_group {
        contacts.extend(g);
    }

    // Patients meet staff of their facility who came to work today.
    for r in runs(&patients, |v| v.0) {
        let g = &patients[r];
        let fac = &pop.facilities[g[0].0.index()];
        let wp = &pop.workplaces[fac.workplace.index()];
        let lo = attendees.partition_point(|a| a.0 < wp.id);
        let hi = attendees.partition_point(|a| a.0 <= wp.id);
        let staff = &attendees[lo..hi];
        if staff.is_empty() {
            continue;
        }
        let mut rng = ctx.key.path(&[GROUP_CARE, fac.id.0 as u64]).stream();
        let mut picks = Vec::new();
        for &(_, patient) in g {
            rng.sample_distinct(staff.len(), p.contacts_per_patient, None, &mut picks);
            for &i in &picks {
                let (_, worker, hours, _) = staff[i];
                contacts.push(Contact::new(patient, worker, Setting::Healthcare, hours, wp.physical_gap, day));
            }
        }
    }

    // Visitors meet anyone present: today's workers there and other visitors.
    let density = relative_density(pop);
    let mut visits: Vec<Contact> = Vec::new();
    for r in runs(&visitors, |v| v.0) {
        let g = &visitors[r];
        let wp = &pop.workplaces[g[0].0.index()];
        let k = if p.visit_density_scaling {
            let scaled = libm::round(p.contacts_per_visit as f64 * density[wp.ward.slot()]) as usize;
            scaled.clamp(1, 4 * p.contacts_per_visit.max(1))
        } else {
            p.contacts_per_visit
        };
        let lo = attendees.partition_point(|a| a.0 < wp.id);
        let hi = attendees.partition_point(|a| a.0 <= wp.id);
        let present: Vec<AgentId> = attendees[lo..hi].iter().map(|a| a.1).chain(g.iter().map(|v| v.1)).collect();
        let mut rng = ctx.key.path(&[GROUP_VISIT, wp.id.0 as u64]).stream();
        let mut picks = Vec::new();
        let mut pairs = Vec::new();
        let workers_here = hi - lo;
        for (vi, &(_, visitor)) in g.iter().enumerate() {
            rng.sample_distinct(present.len(), k, Some(workers_here + vi), &mut picks);
            pairs.extend(picks.iter().map(|&i| {
                let other = present[i];
                if visitor < other { (visitor, other) } else { (other, visitor) }
            }));
        }
        pairs.sort_unstable();
        pairs.dedup();
        for (a, b) in pairs {
            visits.push(Contact::new(a, b, Setting::Visit, p.visit_hours, wp.physical_gap, day));
        }
    }
    // Two agents can meet at each other's workplaces; the first place counts.
    visits.sort_by_key(|c| (c.agent_a, c.agent_b));
    visits.dedup_by_key(|c| (c.agent_a, c.agent_b));
    contacts.append(&mut visits);

    // Transport: a shuffled subset of riders up to the day's cap, packed
    // into vehicles by home ward.
    let mut rng = ctx.key.path(&[GROUP_TRANSPORT]).stream();
    rng.shuffle(&mut riders);
    riders.truncate(ctx.rider_cap);
    let mut by_ward: Vec<(WardId, usize, AgentId)> =
        riders.iter().enumerate().map(|(i, &a)| (pop.agents[a.index()].home_ward, i, a)).collect();
    by_ward.sort_unstable();
    for r in runs(&by_ward, |x| x.0) {
        for vehicle in by_ward[r].chunks(p.vehicle_capacity) {
            for i in 0..vehicle.len() {
                for j in i + 1..vehicle.len() {
                    contacts.push(Contact::new(
                        vehicle[i].2,
                        vehicle[j].2,
                        Setting::Transport,
                        p.commute_hours,
                        p.transport_distance_m,
                        day,
                    ));
                }
            }
        }
    }

    contacts
}

/// Each ward's density over the city-wide density (total head-count over
/// total area). Wards with no recorded density count as average.
pub fn relative_density(pop: &Population) -> Vec<f64> {
    let (mut people, mut area) = (0.0, 0.0);
    for w in &pop.wards {
        if w.density > 0.0 {
            people += w.population as f64;
            area += w.population as f64 / w.density;
        }
    }
    let city = if area > 0.0 { people / area } else { 0.0 };
    pop.wards.iter().map(|w| if city > 0.0 && w.density > 0.0 { w.density / city } else { 1.0 }).collect()
}

/// Returns the travelers who pick up an infection outside the city, each
/// independently with probability `external_ifp`.
pub fn external_infection(eligible: &[AgentId], external_ifp: f64, key: StreamKey) -> Vec<AgentId> {
    eligible
        .iter()
        .copied()
        .filter(|a| key.child(a.0 as u64).stream().bernoulli(external_ifp))
        .collect()
}
