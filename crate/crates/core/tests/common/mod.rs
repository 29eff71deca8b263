#![allow(dead_code)]

use std::path::PathBuf;

use stabopt_core::{load_case, load_scenario, PowerCase, ScenarioSpec};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture(case: &str, scenario: &str) -> (PowerCase, ScenarioSpec) {
    (
        load_case(fixture_path(&format!("{case}.json"))).unwrap(),
        load_scenario(fixture_path(&format!("{scenario}.json"))).unwrap(),
    )
}

/// Certified fixtures: case and fault scenario.
pub const FIXTURES: [(&str, &str); 3] =
    [("two_bus", "two_bus_line2"), ("three_bus", "three_bus_fault3"), ("nine_bus", "nine_bus_line27")];
