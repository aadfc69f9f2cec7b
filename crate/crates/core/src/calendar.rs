//! Day-indexed intervention settings.
//!
//! A [`PolicyCalendar`] is a base [`DaySettings`] plus an ordered list of
//! [`PolicyBlock`]s. Each block covers an inclusive day range and patches some
//! fields; later blocks win. Real-valued fields may ramp linearly across
//! their block.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Day, WardId};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lockdown {
    #[default]
    None,
    CityWide,
    Wards(Vec<WardId>),
}

impl Lockdown {
    pub fn covers(&self, ward: WardId) -> bool {
        match self {
            Lockdown::None => false,
            Lockdown::CityWide => true,
            Lockdown::Wards(w) => w.contains(&ward),
        }
    }
}

/// A value that is either constant over its block or ramps linearly from
/// the first to the last day of the block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Const(f64),
    Ramp { from: f64, to: f64 },
}

impl Level {
    pub fn at(&self, first: Day, last: Day, day: Day) -> f64 {
        match *self {
            Level::Const(v) => v,
            Level::Ramp { from, to } => {
                if last <= first {
                    return to;
                }
                let t = (day.saturating_sub(first)) as f64 / (last - first) as f64;
                from + (to - from) * t.min(1.0)
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Level::Const(v) => (v, v),
            Level::Ramp { from, to } => (from.min(to), from.max(to)),
        }
    }
}

impl From<f64> for Level {
    fn from(v: f64) -> Self {
        Level::Const(v)
    }
}

/// Fully resolved settings for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaySettings {
    pub lockdown: Lockdown,
    pub education_closed: bool,
    pub compliance_rate: f64,
    pub external_ifp: f64,
    /// Whether out-of-city travel happens at all.
    pub external_travel: bool,
    pub transport_fraction: f64,
    pub sd_factor: f64,
    pub tracing_efficacy_workplace: f64,
    pub tracing_efficacy_transport: f64,
    pub test_capacity: u32,
    /// Active known cases per capita at which a ward becomes a containment
    /// zone. `None` disables containment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub containment_threshold: Option<f64>,
}

impl Default for DaySettings {
    fn default() -> Self {
        DaySettings {
            lockdown: Lockdown::None,
            education_closed: false,
            compliance_rate: 1.0,
            external_ifp: 0.0,
            external_travel: true,
            transport_fraction: 0.17,
            sd_factor: 1.0,
            tracing_efficacy_workplace: 0.0,
            tracing_efficacy_transport: 0.0,
            test_capacity: 0,
            containment_threshold: None,
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} = {v} is outside [0, 1]")))
    }
}

impl DaySettings {
    pub fn validate(&self) -> Result<()> {
        check_unit("compliance_rate", self.compliance_rate)?;
        check_unit("external_ifp", self.external_ifp)?;
        check_unit("transport_fraction", self.transport_fraction)?;
        check_unit("tracing_efficacy_workplace", self.tracing_efficacy_workplace)?;
        check_unit("tracing_efficacy_transport", self.tracing_efficacy_transport)?;
        if !(self.sd_factor > 0.0) {
            return Err(Error::config(format!("sd_factor = {} must be positive", self.sd_factor)));
        }
        if let Some(t) = self.containment_threshold {
            if !(t > 0.0) {
                return Err(Error::config("containment_threshold must be positive"));
            }
        }
        Ok(())
    }
}

/// Partial settings applied by a [`PolicyBlock`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lockdown: Option<Lockdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub education_closed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compliance_rate: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_ifp: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_travel: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_fraction: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd_factor: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracing_efficacy_workplace: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracing_efficacy_transport: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_capacity: Option<Level>,
    /// `Some(None)` is not expressible in most text formats; a threshold of
    /// zero in a patch switches containment off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub containment_threshold: Option<f64>,
}

/// Real-valued fields a patch can set, addressed by name from grids and
/// presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelField {
    ComplianceRate,
    ExternalIfp,
    TransportFraction,
    SdFactor,
    TracingWorkplace,
    TracingTransport,
    TestCapacity,
}

impl LevelField {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "compliance_rate" => LevelField::ComplianceRate,
            "external_ifp" => LevelField::ExternalIfp,
            "transport_fraction" => LevelField::TransportFraction,
            "sd_factor" => LevelField::SdFactor,
            "tracing_efficacy_workplace" => LevelField::TracingWorkplace,
            "tracing_efficacy_transport" => LevelField::TracingTransport,
            "test_capacity" => LevelField::TestCapacity,
            _ => return None,
        })
    }
}

impl SettingsPatch {
    pub fn level_mut(&mut self, field: LevelField) -> &mut Option<Level> {
        match field {
            LevelField::ComplianceRate => &mut self.compliance_rate,
            LevelField::ExternalIfp => &mut self.external_ifp,
            LevelField::TransportFraction => &mut self.transport_fraction,
            LevelField::SdFactor => &mut self.sd_factor,
            LevelField::TracingWorkplace => &mut self.tracing_efficacy_workplace,
            LevelField::TracingTransport => &mut self.tracing_efficacy_transport,
            LevelField::TestCapacity => &mut self.test_capacity,
        }
    }

    fn apply(&self, s: &mut DaySettings, first: Day, last: Day, day: Day) {
        let at = |l: &Level| l.at(first, last, day);
        if let Some(l) = &self.lockdown {
            s.lockdown = l.clone();
        }
        if let Some(b) = self.education_closed {
            s.education_closed = b;
        }
        if let Some(l) = &self.compliance_rate {
            s.compliance_rate = at(l);
        }
        if let Some(l) = &self.external_ifp {
            s.external_ifp = at(l);
        }
        if let Some(b) = self.external_travel {
            s.external_travel = b;
        }
        if let Some(l) = &self.transport_fraction {
            s.transport_fraction = at(l);
        }
        if let Some(l) = &self.sd_factor {
            s.sd_factor = at(l);
        }
        if let Some(l) = &self.tracing_efficacy_workplace {
            s.tracing_efficacy_workplace = at(l);
        }
        if let Some(l) = &self.tracing_efficacy_transport {
            s.tracing_efficacy_transport = at(l);
        }
        if let Some(l) = &self.test_capacity {
            s.test_capacity = libm::round(at(l).max(0.0)) as u32;
        }
        if let Some(t) = self.containment_threshold {
            s.containment_threshold = (t > 0.0).then_some(t);
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = [
            ("compliance_rate", &self.compliance_rate),
            ("external_ifp", &self.external_ifp),
            ("transport_fraction", &self.transport_fraction),
            ("tracing_efficacy_workplace", &self.tracing_efficacy_workplace),
            ("tracing_efficacy_transport", &self.tracing_efficacy_transport),
        ];
        for (name, level) in unit {
            if let Some(l) = level {
                let (lo, hi) = l.bounds();
                check_unit(name, lo)?;
                check_unit(name, hi)?;
            }
        }
        if let Some(l) = &self.sd_factor {
            if !(l.bounds().0 > 0.0) {
                return Err(Error::config("sd_factor must be positive"));
            }
        }
        if let Some(l) = &self.test_capacity {
            if !(l.bounds().0 >= 0.0) {
                return Err(Error::config("test_capacity must be non-negative"));
            }
        }
        if self.containment_threshold.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::config("containment_threshold must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyBlock {
    pub first_day: Day,
    /// Inclusive.
    pub last_day: Day,
    pub patch: SettingsPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCalendar {
    /// Number of days covered, starting at day 0.
    pub days: u32,
    pub base: DaySettings,
    #[serde(default)]
    pub blocks: Vec<PolicyBlock>,
}

impl PolicyCalendar {
    pub fn constant(days: u32, base: DaySettings) -> Self {
        PolicyCalendar { days, base, blocks: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.first_day > b.last_day {
                return Err(Error::config(format!("calendar block {i}: first day after last day")));
            }
            b.patch.validate().map_err(|e| Error::config(format!("calendar block {i}: {e}")))?;
        }
        Ok(())
    }

    /// Settings in force on `day`.
    pub fn resolve(&self, day: Day) -> Result<DaySettings> {
        if day >= self.days {
            return Err(Error::DayOutOfRange { day, days: self.days });
        }
        let mut s = self.base.clone();
        for b in &self.blocks {
            if (b.first_day..=b.last_day).contains(&day) {
                b.patch.apply(&mut s, b.first_day, b.last_day, day);
            }
        }
        Ok(s)
    }

    /// Makes `field` constant at `value` over the whole calendar.
    pub fn set_everywhere(&mut self, field: LevelField, value: f64) {
        for b in &mut self.blocks {
            *b.patch.level_mut(field) = None;
        }
        let mut patch = SettingsPatch::default();
        *patch.level_mut(field) = Some(Level::Const(value));
        patch.apply(&mut self.base, 0, 0, 0);
    }

    /// Sets `field` inside block `index` only.
    pub fn set_in_block(&mut self, index: usize, field: LevelField, value: f64) -> Result<()> {
        let block = self
            .blocks
            .get_mut(index)
            .ok_or_else(|| Error::config(format!("calendar has no block {index}")))?;
        *block.patch.level_mut(field) = Some(Level::Const(value));
        Ok(())
    }

    /// Multiplies every test capacity in the calendar by `factor`.
    pub fn scale_test_capacity(&mut self, factor: f64) {
        self.base.test_capacity = libm::round(self.base.test_capacity as f64 * factor) as u32;
        for b in &mut self.blocks {
            if let Some(l) = &mut b.patch.test_capacity {
                *l = match *l {
                    Level::Const(v) => Level::Const(v * factor),
                    Level::Ramp { from, to } => Level::Ramp { from: from * factor, to: to * factor },
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn calendar() -> PolicyCalendar {
        PolicyCalendar {
            days: 100,
            base: DaySettings::default(),
            blocks: vec![
                PolicyBlock {
                    first_day: 0,
                    last_day: 13,
                    patch: SettingsPatch { compliance_rate: Some(0.5.into()), ..Default::default() },
                },
                PolicyBlock {
                    first_day: 14,
                    last_day: 99,
                    patch: SettingsPatch { compliance_rate: Some(0.8.into()), ..Default::default() },
                },
                PolicyBlock {
                    first_day: 20,
                    last_day: 30,
                    patch: SettingsPatch {
                        external_ifp: Some(Level::Ramp { from: 0.0, to: 0.1 }),
                        lockdown: Some(Lockdown::CityWide),
                        ..Default::default()
                    },
                },
            ],
        }
    }

    #[test]
    fn step_schedule() {
        let c = calendar();
        assert_eq!(c.resolve(0).unwrap().compliance_rate, 0.5);
        assert_eq!(c.resolve(13).unwrap().compliance_rate, 0.5);
        assert_eq!(c.resolve(14).unwrap().compliance_rate, 0.8);
    }

    #[test]
    fn ramps_are_linear_and_later_blocks_win() {
        let c = calendar();
        assert_eq!(c.resolve(19).unwrap().external_ifp, 0.0);
        assert!((c.resolve(25).unwrap().external_ifp - 0.05).abs() < 1e-12);
        assert_eq!(c.resolve(30).unwrap().external_ifp, 0.1);
        assert_eq!(c.resolve(30).unwrap().lockdown, Lockdown::CityWide);
        assert_eq!(c.resolve(31).unwrap().lockdown, Lockdown::None);
    }

    #[test]
    fn out_of_range_day() {
        assert_eq!(calendar().resolve(100), Err(Error::DayOutOfRange { day: 100, days: 100 }));
    }

    #[test]
    fn set_everywhere_overrides_blocks() {
        let mut c = calendar();
        c.set_everywhere(LevelField::ComplianceRate, 0.3);
        assert!((0..100).all(|d| c.resolve(d).unwrap().compliance_rate == 0.3));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = calendar();
        c.blocks[0].patch.compliance_rate = Some(Level::Ramp { from: 0.2, to: 1.2 });
        assert!(c.validate().is_err());
        let mut c = calendar();
        c.base.sd_factor = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn lockdown_coverage() {
        assert!(!Lockdown::None.covers(WardId(3)));
        assert!(Lockdown::CityWide.covers(WardId(3)));
        assert!(Lockdown::Wards(vec![WardId(2), WardId(3)]).covers(WardId(3)));
        assert!(!Lockdown::Wards(vec![WardId(2)]).covers(WardId(3)));
    }
}
