//! Domain vocabulary shared by every module: agents, disease states,
//! workplaces, healthcare facilities and wards.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation tick. Day 0 is the first day of the policy calendar.
pub type Day = u32;

/// Highest age-group index; everyone aged 100 or older lands here.
pub const MAX_AGE_GROUP: u8 = 10;

macro_rules! id_newtype {
    ($(#[$m:meta])* $name:ident($inner:ty)) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(AgentId(u32));
id_newtype!(FamilyId(u32));
id_newtype!(WorkplaceId(u32));
id_newtype!(FacilityId(u32));
id_newtype!(SectorId(u16));
id_newtype!(
    /// Ward ids run from 1 to the ward count.
    WardId(u16)
);

impl WardId {
    /// Zero-based position in ward-indexed arrays.
    #[inline]
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }
}

pub fn age_group(age: u8) -> u8 {
    (age / 10).min(MAX_AGE_GROUP)
}

/// Occupational category of an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupation {
    /// Children, retirees and adults without a workplace.
    Dependent,
    Student,
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkAssignment {
    pub sector: SectorId,
    pub sub_sector: u16,
    pub workplace: WorkplaceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub id: AgentId,
    pub age: u8,
    pub age_group: u8,
    pub family: FamilyId,
    pub home_ward: WardId,
    pub is_citizen: bool,
    pub workplace: Option<WorkAssignment>,
    pub visiting_places: Vec<WorkplaceId>,
    pub comorbidity: bool,
    /// Daily family income. Carried for completeness; it does not drive dynamics.
    pub income_level: f64,
    pub occupation: Occupation,
    pub uses_public_transport: bool,
}

impl Agent {
    pub fn validate(&self) -> Result<()> {
        if self.age_group != age_group(self.age) {
            return Err(Error::invariant(format!(
                "agent {}: age group {} does not match age {}",
                self.id, self.age_group, self.age
            )));
        }
        let has_place = self.workplace.is_some();
        match self.occupation {
            Occupation::Dependent if has_place => Err(Error::invariant(format!(
                "agent {}: dependent with a workplace",
                self.id
            ))),
            Occupation::Student | Occupation::Worker if !has_place => Err(Error::invariant(format!(
                "agent {}: {:?} without a workplace",
                self.id, self.occupation
            ))),
            _ if !(self.income_level >= 0.0) => Err(Error::invariant(format!(
                "agent {}: negative income",
                self.id
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VirusState {
    Healthy,
    InfectedSymptomatic,
    InfectedAsymptomatic,
    Recovered,
    Dead,
}

impl VirusState {
    #[inline]
    pub fn is_infected(self) -> bool {
        matches!(self, VirusState::InfectedSymptomatic | VirusState::InfectedAsymptomatic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityState {
    Free,
    OutOfCity,
    Quarantined,
    Isolated,
    Hospitalized,
}

/// The two-axis state of one agent on one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiseaseState {
    pub virus: VirusState,
    pub mobility: MobilityState,
    pub infected_on: Option<Day>,
    pub viral_load: Option<f64>,
    pub peak_day: Option<Day>,
    pub recovery_day: Option<Day>,
}

impl Default for DiseaseState {
    fn default() -> Self {
        Self::healthy()
    }
}

impl DiseaseState {
    pub const fn healthy() -> Self {
        DiseaseState {
            virus: VirusState::Healthy,
            mobility: MobilityState::Free,
            infected_on: None,
            viral_load: None,
            peak_day: None,
            recovery_day: None,
        }
    }

    /// Infected agents transmit from the day after infection.
    #[inline]
    pub fn is_infectious(&self, today: Day) -> bool {
        self.virus.is_infected() && self.infected_on.is_some_and(|d| d < today)
    }

    pub fn validate(&self) -> Result<()> {
        let infected = self.virus.is_infected();
        let marked = self.infected_on.is_some() && self.viral_load.is_some();
        if infected != marked {
            return Err(Error::invariant(format!(
                "{:?} with infected_on={:?} viral_load={:?}",
                self.virus, self.infected_on, self.viral_load
            )));
        }
        if infected != (self.infected_on.is_some() || self.viral_load.is_some()) {
            return Err(Error::invariant("partially set infection record"));
        }
        if let Some(v) = self.viral_load {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invariant(format!("viral load {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workplace {
    pub id: WorkplaceId,
    pub sector: SectorId,
    pub sub_sector: u16,
    pub ward: WardId,
    pub location: (f64, f64),
    pub is_essential: bool,
    pub workers: Vec<AgentId>,
    pub visitors: Vec<AgentId>,
    /// Daily economic output; not used by the dynamics.
    pub income_level: f64,
    pub working_hours: f64,
    pub physical_gap: f64,
}

impl Workplace {
    pub fn validate(&self) -> Result<()> {
        if !(self.physical_gap > 0.0) {
            return Err(Error::invariant(format!("workplace {}: physical gap must be positive", self.id)));
        }
        if !(0.0..=24.0).contains(&self.working_hours) {
            return Err(Error::invariant(format!("workplace {}: working hours outside [0, 24]", self.id)));
        }
        let mut workers = self.workers.clone();
        workers.sort_unstable();
        if self.visitors.iter().any(|v| workers.binary_search(v).is_ok()) {
            return Err(Error::invariant(format!("workplace {}: visitor is also a worker", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacilityKind {
    CovidHospital,
    HealthcareCentre,
    IsolationCentre,
}

impl FacilityKind {
    pub const ALL: [FacilityKind; 3] =
        [FacilityKind::CovidHospital, FacilityKind::HealthcareCentre, FacilityKind::IsolationCentre];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payment {
    Free,
    Paid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthcareFacility {
    pub id: FacilityId,
    /// The workplace whose workers staff this facility.
    pub workplace: WorkplaceId,
    pub kind: FacilityKind,
    pub ward: WardId,
    pub beds: u32,
    pub icu_beds: u32,
    pub ventilators: u32,
    pub workers: Vec<AgentId>,
    pub payment: Payment,
    pub occupancy_count: u32,
}

impl HealthcareFacility {
    pub fn validate(&self) -> Result<()> {
        if self.occupancy_count > self.beds {
            return Err(Error::invariant(format!("facility {}: occupancy exceeds beds", self.id)));
        }
        if self.icu_beds > self.beds {
            return Err(Error::invariant(format!("facility {}: more ICU beds than beds", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ward {
    pub id: WardId,
    pub population: u32,
    /// Persons per km².
    pub density: f64,
    pub area: Option<f64>,
    pub workplace_ids: Vec<WorkplaceId>,
    pub school_ids: Vec<WorkplaceId>,
    pub facility_ids: Vec<FacilityId>,
}

impl Ward {
    pub fn validate(&self) -> Result<()> {
        if let Some(area) = self.area {
            if area > 0.0 && self.population > 0 {
                let expect = self.population as f64 / area;
                if libm::fabs(expect - self.density) > 0.01 * expect {
                    return Err(Error::invariant(format!(
                        "ward {}: density {} disagrees with population/area {}",
                        self.id, self.density, expect
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One economic sector with the per-sector defaults workplaces inherit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sector {
    pub id: SectorId,
    pub name: String,
    pub working_hours: f64,
    pub physical_gap: f64,
    pub is_essential: bool,
    pub is_education: bool,
    pub is_healthcare: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent() -> Agent {
        Agent {
            id: AgentId(1),
            age: 34,
            age_group: 3,
            family: FamilyId(0),
            home_ward: WardId(1),
            is_citizen: true,
            workplace: None,
            visiting_places: Vec::new(),
            comorbidity: false,
            income_level: 10.0,
            occupation: Occupation::Dependent,
            uses_public_transport: false,
        }
    }

    #[test]
    fn age_groups_cap_at_ten() {
        assert_eq!(age_group(0), 0);
        assert_eq!(age_group(9), 0);
        assert_eq!(age_group(10), 1);
        assert_eq!(age_group(99), 9);
        assert_eq!(age_group(100), 10);
        assert_eq!(age_group(120), 10);
    }

    #[test]
    fn agent_validation() {
        assert!(agent().validate().is_ok());
        let mut a = agent();
        a.age_group = 4;
        assert!(a.validate().is_err());
        let mut a = agent();
        a.occupation = Occupation::Worker;
        assert!(a.validate().is_err());
    }

    #[test]
    fn disease_state_validation() {
        assert!(DiseaseState::healthy().validate().is_ok());
        let mut s = DiseaseState::healthy();
        s.virus = VirusState::InfectedAsymptomatic;
        assert!(s.validate().is_err());
        s.infected_on = Some(3);
        s.viral_load = Some(0.4);
        assert!(s.validate().is_ok());
        s.viral_load = Some(1.5);
        assert!(s.validate().is_err());
        let mut r = DiseaseState::healthy();
        r.virus = VirusState::Recovered;
        r.infected_on = Some(2);
        assert!(r.validate().is_err());
    }

    #[test]
    fn infectious_from_next_day() {
        let mut s = DiseaseState::healthy();
        s.virus = VirusState::InfectedAsymptomatic;
        s.infected_on = Some(5);
        s.viral_load = Some(0.1);
        assert!(!s.is_infectious(5));
        assert!(s.is_infectious(6));
    }

    #[test]
    fn workplace_rejects_overlap() {
        let w = Workplace {
            id: WorkplaceId(0),
            sector: SectorId(0),
            sub_sector: 0,
            ward: WardId(1),
            location: (0.0, 0.0),
            is_essential: false,
            workers: alloc::vec![AgentId(1), AgentId(2)],
            visitors: alloc::vec![AgentId(2)],
            income_level: 0.0,
            working_hours: 8.0,
            physical_gap: 2.0,
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn ward_density_check() {
        let mut w = Ward {
            id: WardId(1),
            population: 1000,
            density: 500.0,
            area: Some(2.0),
            workplace_ids: Vec::new(),
            school_ids: Vec::new(),
            facility_ids: Vec::new(),
        };
        assert!(w.validate().is_ok());
        w.density = 520.0;
        assert!(w.validate().is_err());
    }
}
