//! Fixture loading shared by the benchmarks.

use std::path::PathBuf;

use stabopt_core::{load_case, load_scenario, PowerCase, ScenarioSpec};

/// The benchmarked studies: case file and fault scenario.
pub const STUDIES: [(&str, &str); 3] =
    [("two_bus", "two_bus_line2"), ("three_bus", "three_bus_fault3"), ("nine_bus", "nine_bus_line27")];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"))
}

pub fn study(case: &str, scenario: &str) -> (PowerCase, ScenarioSpec) {
    let c = load_case(fixture_path(case)).expect("fixture case");
    let s = load_scenario(fixture_path(scenario)).expect("fixture scenario");
    (c, s)
}
