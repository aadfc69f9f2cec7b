use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use citysim::config::ScenarioConfig;
use citysim::data::{KOLKATA_SECTORS, KOLKATA_TOTAL, KOLKATA_WARDS};
use citysim::io::{parse_observed, parse_sector_table, parse_ward_table, read_population, read_state, write_population, write_state, StateSnapshot};
use citysim::presets::{catalog, kolkata_2020, preset};
use citysim::Error;
use citysim_core::engine::{initial_state, step_day, StepParams};
use citysim_core::population::{synthesize_population, PopulationConfig, SectorTable, WardRow, WardTable};
use citysim_core::WardId;
use proptest::prelude::*;

fn p() -> &'static Path {
    Path::new("test.csv")
}

#[test]
fn bundled_kolkata_wards() {
    let t = parse_ward_table(KOLKATA_WARDS.as_bytes(), p()).unwrap();
    assert_eq!(t.rows.len(), 141);
    assert_eq!(t.total(), KOLKATA_TOTAL);
}

#[test]
fn bundled_education_sector_size() {
    let t = parse_sector_table(KOLKATA_SECTORS.as_bytes(), p()).unwrap();
    let edu = t.rows.iter().find(|r| r.name == "Education").unwrap();
    assert_eq!(edu.workers, 720_801);
}

#[test]
fn ward_table_errors_name_the_problem() {
    let e = parse_ward_table("ward_id,population,density\n".as_bytes(), p()).unwrap_err();
    assert!(e.to_string().contains("no data rows"), "{e}");

    let dup = "ward_id,population,density\n7,100,1000\n8,100,1000\n7,50,1000\n";
    let e = parse_ward_table(dup.as_bytes(), p()).unwrap_err();
    assert!(e.to_string().contains("duplicate ward id 7"), "{e}");

    let e = parse_ward_table("ward_id,density\n1,5\n".as_bytes(), p()).unwrap_err();
    assert!(e.to_string().contains("missing column(s): population"), "{e}");

    let bad = "ward_id,population,density\n1,100,1000\n2,lots,1000\n";
    match parse_ward_table(bad.as_bytes(), p()).unwrap_err() {
        Error::Parse { line, msg, .. } => {
            assert_eq!(line, 3);
            assert!(msg.contains("population"), "{msg}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn sector_table_parse_errors_carry_line_numbers() {
    let bad = "sector,workers,centers,hours,gap_m\nRetail,100,4,8,2\nHealthcare,10,1;x;1,0,2\n";
    match parse_sector_table(bad.as_bytes(), p()).unwrap_err() {
        Error::Parse { line, msg, .. } => {
            assert_eq!(line, 3);
            assert!(msg.contains("centers"), "{msg}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn observed_series_must_be_contiguous() {
    let ok = parse_observed("date,count\n2020-05-03,651\n2020-05-04,700\n".as_bytes(), p()).unwrap();
    assert_eq!(ok.counts, vec![651.0, 700.0]);
    assert!(parse_observed("date,count\n2020-05-03,1\n2020-05-05,2\n".as_bytes(), p()).is_err());
    assert!(parse_observed("date,count\n2020-05-03,-1\n".as_bytes(), p()).is_err());
}

/// Agents per sector at scale 0.01, counted over the generated city.
#[test]
fn sector_assignments_follow_the_scaled_table() {
    let wards = parse_ward_table(KOLKATA_WARDS.as_bytes(), p()).unwrap();
    let sectors = parse_sector_table(KOLKATA_SECTORS.as_bytes(), p()).unwrap();
    let cfg = PopulationConfig { scale: 0.01, ..Default::default() };
    let pop = synthesize_population(&wards, &sectors, &cfg, 1).unwrap();
    let mut tally: BTreeMap<&str, u64> = BTreeMap::new();
    for a in &pop.agents {
        if let Some(w) = a.workplace {
            *tally.entry(pop.sectors[w.sector.0 as usize].name.as_str()).or_default() += 1;
        }
    }
    for row in &sectors.rows {
        let expect = (row.workers as f64 * 0.01).round() as i64;
        let got = tally.get(row.name.as_str()).copied().unwrap_or(0) as i64;
        assert!((got - expect).abs() <= 1, "{}: {got} assigned, expected {expect}", row.name);
    }
}

#[test]
fn state_snapshot_round_trip() {
    let mut s = kolkata_2020();
    s.population.params.scale = 0.0005;
    let pop = s.build_population().unwrap();
    let cfg = s.sim_config(&pop, Path::new("kolkata")).unwrap();
    let (mut st, _) = initial_state(&cfg, &pop, 4).unwrap();
    for _ in 0..20 {
        step_day(&mut st, StepParams::from(&cfg)).unwrap();
    }
    let snap = StateSnapshot::capture(&st);
    let mut buf = Vec::new();
    write_state(&mut buf, &snap, p()).unwrap();
    assert_eq!(read_state(buf.as_slice(), p()).unwrap(), snap);

    let text = String::from_utf8(buf).unwrap();
    let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(read_state(truncated.as_bytes(), p()).is_err());
}

#[test]
fn every_preset_survives_a_toml_round_trip() {
    for (name, _) in catalog() {
        let s = preset(&name).unwrap();
        let text = s.to_toml();
        let back = ScenarioConfig::from_toml(&text, Path::new("preset.toml")).unwrap();
        assert_eq!(back, s, "{name}");
        assert_eq!(back.compile().unwrap(), s.compile().unwrap(), "{name}");
    }
}

#[test]
fn scenario_file_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let s = preset("weekend-lockdown").unwrap();
    s.save(&path).unwrap();
    assert_eq!(ScenarioConfig::load(&path).unwrap(), s);
}

#[test]
fn scenario_schema_is_strict() {
    let good = kolkata_2020().to_toml();
    let unknown = good.replacen("name = ", "colour = \"red\"\nname = ", 1);
    let e = ScenarioConfig::from_toml(&unknown, Path::new("x.toml")).unwrap_err().to_string();
    assert!(e.contains("x.toml") && e.contains("colour"), "{e}");

    let unversioned: String = good.lines().filter(|l| !l.starts_with("version")).map(|l| format!("{l}\n")).collect();
    assert!(ScenarioConfig::from_toml(&unversioned, Path::new("x.toml")).is_err());

    let future = good.replacen("version = 1", "version = 99", 1);
    let e = ScenarioConfig::from_toml(&future, Path::new("x.toml")).unwrap_err().to_string();
    assert!(e.contains("version"), "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn population_file_round_trip(seed in any::<u64>(), per_ward in 30u64..90) {
        let wards = WardTable {
            rows: (1..=3).map(|i| WardRow { id: WardId(i), population: per_ward * i as u64, density: Some(1e4), area: None }).collect(),
        };
        let sectors = parse_sector_table("sector,workers,centers,hours,gap_m\nEducation,12,2,6,1\nHealthcare,3,1;1;1,0,2\nRetail,15,3,8,2\n".as_bytes(), p()).unwrap();
        let pop = synthesize_population(&wards, &sectors, &PopulationConfig::default(), seed).unwrap();
        let mut buf = Vec::new();
        write_population(&mut buf, &pop, p()).unwrap();
        let back = read_population(buf.as_slice(), p()).unwrap();
        prop_assert_eq!(&back, &pop);
        // And the reloaded city simulates identically.
        let mut s = kolkata_2020();
        s.seeds = vec![seed];
        s.initial_infections = 3;
        let a = Arc::new(pop);
        let b = Arc::new(back);
        let mut cfg = s.sim_config(&a, Path::new("x")).unwrap();
        cfg.days = 10;
        prop_assert_eq!(citysim_core::engine::run(&cfg, &a).unwrap(), citysim_core::engine::run(&cfg, &b).unwrap());
    }

    #[test]
    fn ward_csv_round_trip(pops in proptest::collection::vec((1u32..200_000, 100.0f64..80_000.0), 1..30)) {
        let mut text = String::from("ward_id,population,density\n");
        for (i, (n, d)) in pops.iter().enumerate() {
            text.push_str(&format!("{},{},{}\n", i + 1, n, d));
        }
        let t = parse_ward_table(text.as_bytes(), p()).unwrap();
        prop_assert_eq!(t.rows.len(), pops.len());
        for (row, (n, d)) in t.rows.iter().zip(&pops) {
            prop_assert_eq!(row.population, *n as u64);
            prop_assert_eq!(row.density, Some(*d));
        }
    }
}

#[test]
fn empty_sector_table_is_allowed() {
    let wards = WardTable { rows: vec![WardRow { id: WardId(1), population: 10, density: Some(1.0), area: None }] };
    let pop = synthesize_population(&wards, &SectorTable::empty(), &PopulationConfig::default(), 1).unwrap();
    assert_eq!(pop.len(), 10);
    assert!(pop.agents.iter().all(|a| a.workplace.is_none()));
    assert!(!pop.families.is_empty());
}
