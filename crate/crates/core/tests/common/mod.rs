#![allow(dead_code)]

use std::path::PathBuf;

use qssdiag::dae::{PartitionedState, PowerModel};
use qssdiag::netmodel::{parse_scenario, parse_system, ScenarioSpec, SystemSpec};
use qssdiag::solvers::initialize_equilibrium;
use serde_json::{json, Value};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load_system(name: &str) -> SystemSpec {
    let text = std::fs::read(fixture_path(name)).expect("fixture readable");
    parse_system(&text).expect("fixture parses")
}

pub fn load_scenario(name: &str) -> ScenarioSpec {
    let text = std::fs::read(fixture_path(name)).expect("fixture readable");
    parse_scenario(&text).expect("fixture parses")
}

pub fn benign() -> (SystemSpec, ScenarioSpec) {
    (load_system("benign_system.json"), load_scenario("benign_scenario.json"))
}

pub fn counter() -> (SystemSpec, ScenarioSpec) {
    (
        load_system("counter_system.json"),
        load_scenario("counter_scenario.json"),
    )
}

pub fn equilibrium(sys: &SystemSpec) -> (PowerModel, PartitionedState) {
    initialize_equilibrium(sys).expect("fixture initializes")
}

/// Slack bus B1 feeding a PQ bus B2 through one lossless line.
pub fn two_bus_json(x: f64, p: f64, q: f64) -> Value {
    json!({
        "schema": 1,
        "buses": [
            {"id": "B1", "base_kv": 100.0, "kind": "Slack", "v_set": 1.0},
            {"id": "B2", "base_kv": 100.0, "kind": "PQ", "p_load": p, "q_load": q}
        ],
        "branches": [{"id": "L12", "from": "B1", "to": "B2", "x": x}]
    })
}

pub fn system_from(v: &Value) -> SystemSpec {
    parse_system(v.to_string().as_bytes()).expect("valid system")
}
