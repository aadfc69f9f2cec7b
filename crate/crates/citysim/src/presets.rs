//! Named scenarios: the Kolkata 2020 calibration and its what-if variants.

use chrono::{Datelike, NaiveDate, Weekday};
use citysim_core::calendar::{DaySettings, Level, LevelField, Lockdown, SettingsPatch};
use citysim_core::disease::DiseaseParams;
use citysim_core::mobility::MobilityParams;
use citysim_core::policy::PolicyParams;

use crate::config::{CalendarSection, DateBlock, PopulationSection, ScenarioConfig, WarmupSection, SCHEMA_VERSION};
use crate::error::{Error, Result};

/// Known active cases per resident at which a ward becomes a containment zone.
pub const CONTAINMENT_THRESHOLD: f64 = 5e-4;

pub const LONG_LOCKDOWN_DAYS: [u32; 5] = [30, 45, 60, 75, 90];
pub const TRANSPORT_FRACTIONS: [f64; 4] = [0.01, 0.05, 0.085, 0.1];
pub const TRACING_WORKPLACE: [u32; 5] = [60, 70, 80, 90, 100];
pub const TRACING_TRANSPORT: [u32; 6] = [30, 40, 50, 60, 70, 100];
pub const COMPLIANCE_RATES: [f64; 6] = [0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
pub const SD_FACTORS: [f64; 9] = [2.0, 1.8, 1.6, 1.4, 1.2, 1.0, 0.8, 0.6, 0.4];

/// Single-day city-wide lockdowns in Kolkata, July to September 2020.
const KOLKATA_SHORT_LOCKDOWNS: [(u32, u32); 13] =
    [(7, 23), (7, 25), (7, 29), (8, 5), (8, 8), (8, 20), (8, 21), (8, 27), (8, 28), (8, 31), (9, 7), (9, 11), (9, 12)];

fn date(m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, m, d).expect("valid 2020 date")
}

fn block(from: NaiveDate, to: Option<NaiveDate>, set: SettingsPatch) -> DateBlock {
    DateBlock { from, to, set }
}

fn lockdown_on(from: NaiveDate, to: NaiveDate) -> DateBlock {
    block(from, Some(to), SettingsPatch { lockdown: Some(Lockdown::CityWide), ..Default::default() })
}

/// Which parts of the Kolkata calendar a variant keeps.
#[derive(Clone, Copy)]
struct Keep {
    lockdowns: bool,
    containment: bool,
}

fn kolkata_calendar(keep: Keep) -> CalendarSection {
    let base = DaySettings {
        lockdown: Lockdown::None,
        education_closed: true,
        compliance_rate: 0.5,
        external_ifp: 0.01,
        external_travel: true,
        transport_fraction: 0.085,
        sd_factor: 1.0,
        tracing_efficacy_workplace: 0.6,
        tracing_efficacy_transport: 0.3,
        test_capacity: 500,
        containment_threshold: None,
    };
    let mut blocks = Vec::new();
    if keep.lockdowns {
        blocks.push(block(
            date(3, 25),
            Some(date(5, 31)),
            SettingsPatch { lockdown: Some(Lockdown::CityWide), transport_fraction: Some(Level::Const(0.01)), ..Default::default() },
        ));
    }
    blocks.push(block(date(5, 15), Some(date(7, 31)), SettingsPatch { compliance_rate: Some(Level::Const(0.8)), ..Default::default() }));
    blocks.push(block(date(8, 1), None, SettingsPatch { compliance_rate: Some(Level::Const(0.4)), ..Default::default() }));
    blocks.push(block(
        date(7, 1),
        Some(date(8, 31)),
        SettingsPatch { external_ifp: Some(Level::Ramp { from: 0.01, to: 0.25 }), ..Default::default() },
    ));
    blocks.push(block(date(9, 1), None, SettingsPatch { external_ifp: Some(Level::Const(0.25)), ..Default::default() }));
    if keep.lockdowns {
        for (m, d) in KOLKATA_SHORT_LOCKDOWNS {
            blocks.push(lockdown_on(date(m, d), date(m, d)));
        }
    }
    blocks.push(block(date(9, 14), None, SettingsPatch { transport_fraction: Some(Level::Const(0.1)), ..Default::default() }));
    blocks.push(block(
        date(5, 1),
        None,
        SettingsPatch { test_capacity: Some(Level::Ramp { from: 1500.0, to: 12000.0 }), ..Default::default() },
    ));
    if keep.containment {
        blocks.push(block(date(6, 1), None, SettingsPatch { containment_threshold: Some(CONTAINMENT_THRESHOLD), ..Default::default() }));
    }
    CalendarSection { base, blocks }
}

fn scenario(name: &str, calendar: CalendarSection) -> ScenarioConfig {
    ScenarioConfig {
        version: SCHEMA_VERSION,
        name: name.to_string(),
        start_date: date(5, 3),
        end_date: date(10, 1),
        calendar_origin: Some(date(3, 25)),
        seeds: vec![1],
        initial_infections: 1495,
        record_events: false,
        population: PopulationSection::default(),
        disease: DiseaseParams::default(),
        mobility: MobilityParams::default(),
        policy: PolicyParams::default(),
        calendar,
        warmup: None,
    }
}

pub fn kolkata_2020() -> ScenarioConfig {
    scenario("kolkata-2020", kolkata_calendar(Keep { lockdowns: true, containment: true }))
}

/// The reverse-seeding search that replaces the fixed initial infections.
pub fn kolkata_warmup() -> WarmupSection {
    WarmupSection { start_date: date(3, 25), target_positive: 651, candidates: 4, infection_counts: vec![10, 20, 50, 100, 200], tolerance: 0.1 }
}

fn without_lockdowns(name: &str) -> ScenarioConfig {
    scenario(name, kolkata_calendar(Keep { lockdowns: false, containment: false }))
}

fn long_lockdown(days: u32) -> ScenarioConfig {
    let mut s = without_lockdowns(&format!("long-lockdown-{days}"));
    s.calendar.base.external_travel = false;
    let first = date(5, 1);
    s.calendar.blocks.push(lockdown_on(first, first + chrono::Days::new(days as u64 - 1)));
    s
}

fn weekend_lockdown() -> ScenarioConfig {
    let mut s = without_lockdowns("weekend-lockdown");
    let mut d = s.start_date;
    while d <= s.end_date {
        if d.weekday() == Weekday::Sat {
            s.calendar.blocks.push(lockdown_on(d, (d + chrono::Days::new(1)).min(s.end_date)));
        } else if d == s.start_date && d.weekday() == Weekday::Sun {
            s.calendar.blocks.push(lockdown_on(d, d));
        }
        d = d.succ_opt().expect("date in range");
    }
    s
}

fn month_end(d: NaiveDate) -> NaiveDate {
    let (y, m) = if d.month() == 12 { (d.year() + 1, 1) } else { (d.year(), d.month() + 1) };
    NaiveDate::from_ymd_opt(y, m, 1).and_then(|n| n.pred_opt()).expect("valid month")
}

fn monthly_lockdown() -> ScenarioConfig {
    let mut s = without_lockdowns("monthly-lockdown");
    let mut m = NaiveDate::from_ymd_opt(s.start_date.year(), s.start_date.month(), 1).expect("valid month");
    while m <= s.end_date {
        let last = month_end(m);
        let first = last - chrono::Days::new(6);
        if last >= s.start_date && first <= s.end_date {
            s.calendar.blocks.push(lockdown_on(first.max(s.start_date), last.min(s.end_date)));
        }
        m = last.succ_opt().expect("date in range");
    }
    s
}

fn no_lockdown() -> ScenarioConfig {
    let mut s = without_lockdowns("no-lockdown");
    s.calendar.base.education_closed = false;
    s.calendar.base.transport_fraction = 0.17;
    s.calendar.blocks.retain(|b| b.set.transport_fraction.is_none());
    s
}

fn with_level(name: &str, fields: &[(LevelField, f64)]) -> Result<ScenarioConfig> {
    let mut s = kolkata_2020();
    s.name = name.to_string();
    for &(field, value) in fields {
        s.set_level_everywhere(field, value);
    }
    s.calendar.blocks.retain(|b| b.set != SettingsPatch::default());
    s.calendar.base.validate().map_err(|_| Error::UnknownPreset(name.to_string()))?;
    Ok(s)
}

fn number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let unknown = || Error::UnknownPreset(name.to_string());
    match name {
        "kolkata-2020" => return Ok(kolkata_2020()),
        "weekend-lockdown" => return Ok(weekend_lockdown()),
        "monthly-lockdown" => return Ok(monthly_lockdown()),
        "education-only" => return Ok(without_lockdowns("education-only")),
        "no-lockdown" => return Ok(no_lockdown()),
        _ => {}
    }
    if let Some(d) = name.strip_prefix("long-lockdown-") {
        let d: u32 = d.parse().map_err(|_| unknown())?;
        return if (1..=150).contains(&d) { Ok(long_lockdown(d)) } else { Err(unknown()) };
    }
    if let Some(f) = name.strip_prefix("transport-") {
        return with_level(name, &[(LevelField::TransportFraction, number(f).ok_or_else(unknown)?)]);
    }
    if let Some(c) = name.strip_prefix("compliance-") {
        return with_level(name, &[(LevelField::ComplianceRate, number(c).ok_or_else(unknown)?)]);
    }
    if let Some(s) = name.strip_prefix("sdfactor-") {
        return with_level(name, &[(LevelField::SdFactor, number(s).ok_or_else(unknown)?)]);
    }
    if let Some(rest) = name.strip_prefix("tracing-") {
        let (w, t) = rest.split_once('-').ok_or_else(unknown)?;
        let w = number(w).ok_or_else(unknown)? / 100.0;
        let t = number(t).ok_or_else(unknown)? / 100.0;
        return with_level(name, &[(LevelField::TracingWorkplace, w), (LevelField::TracingTransport, t)]);
    }
    Err(unknown())
}

/// Every preset with the parameter values studied for Kolkata, and a
/// one-line description.
pub fn catalog() -> Vec<(String, String)> {
    let mut out = vec![
        ("kolkata-2020".to_string(), "Kolkata policy calendar, May 3 to Oct 1 2020".to_string()),
        ("weekend-lockdown".to_string(), "city-wide lockdown every Saturday and Sunday".to_string()),
        ("monthly-lockdown".to_string(), "city-wide lockdown over the last 7 days of each month".to_string()),
        ("education-only".to_string(), "only schools and colleges closed".to_string()),
        ("no-lockdown".to_string(), "no closures; pre-pandemic transport use".to_string()),
    ];
    for d in LONG_LOCKDOWN_DAYS {
        out.push((format!("long-lockdown-{d}"), format!("{d}-day city-wide lockdown from May 1, no travel")));
    }
    for f in TRANSPORT_FRACTIONS {
        out.push((format!("transport-{f}"), format!("public transport fraction {f} throughout")));
    }
    for w in TRACING_WORKPLACE {
        for t in TRACING_TRANSPORT {
            out.push((format!("tracing-{w}-{t}"), format!("tracing efficacy {w}% workplace, {t}% transport")));
        }
    }
    for c in COMPLIANCE_RATES {
        out.push((format!("compliance-{c}"), format!("compliance rate {c} throughout")));
    }
    for s in SD_FACTORS {
        out.push((format!("sdfactor-{s}"), format!("physical distance factor {s} throughout")));
    }
    out
}
