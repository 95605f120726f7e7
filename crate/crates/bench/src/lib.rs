//! Shared fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use flightopt_core::{NlpInstance, PolynomialWindField, Scenario};

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Loads one of the shipped scenarios and resolves its wind field.
pub fn scenario(name: &str) -> (Scenario, PolynomialWindField) {
    let dir = scenario_dir();
    let s = Scenario::load(&dir.join(name)).expect("shipped scenario loads");
    let (field, _) = s.wind_field(&dir).expect("shipped wind resolves");
    (s, field)
}

/// Transcribed ORD-SFO instance with `steps` intervals at `hours`, plus its
/// straight-line starting point.
pub fn ord_sfo(wind: bool, steps: usize, hours: f64) -> (NlpInstance, Vec<f64>) {
    let name = if wind {
        "ord_sfo_wind.json"
    } else {
        "ord_sfo_nowind.json"
    };
    let (s, field) = scenario(name);
    let mut problem = s.problem(hours).expect("problem builds");
    problem.steps = steps;
    problem.dt = hours * 3600.0 / steps as f64;
    let inst = NlpInstance::build(problem, field, s.aircraft).expect("instance builds");
    let z = inst.initial_guess().z;
    (inst, z)
}
