//! The result bundle written by `optimize` and read back by `compare` and
//! `replay`.

use std::path::Path;

use anyhow::{bail, Context};
use flightopt_core::export::{self, geojson, trajectory_csv, write_atomic, write_json};
use flightopt_core::scenario::Weights;
use flightopt_core::sim::{self, replay};
use flightopt_core::solver::{format_log, HorizonProbe};
use flightopt_core::transcription::STATE_SCALE;
use flightopt_core::{
    AircraftParams, Control, FitReport, NlpInstance, ObjectiveMode, Scenario, SolveResult, SolveStatus, State, Stepper,
    TrajectoryMetrics,
};
use serde::Serialize;

pub const TRAJECTORY: &str = "trajectory.csv";
pub const METRICS: &str = "metrics.json";
pub const GEOJSON: &str = "trajectory.geojson";
pub const SOLVER_LOG: &str = "solver.log";
pub const SCENARIO: &str = "scenario.json";

#[derive(Clone, Debug, Serialize)]
pub struct Search {
    pub probes: Vec<HorizonProbe>,
    pub infeasible_below_hours: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub objective: f64,
    pub feas_norm: f64,
    pub stat_norm: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub clipped_initial_guess: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateGap {
    pub x_km: f64,
    pub y_km: f64,
    pub v_mps: f64,
    pub m_kg: f64,
    pub theta_rad: f64,
}

impl StateGap {
    fn from_array(g: [f64; 5]) -> Self {
        StateGap {
            x_km: g[0],
            y_km: g[1],
            v_mps: g[2],
            m_kg: g[3],
            theta_rad: g[4],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplayReport {
    pub stepper: Stepper,
    pub max_gap: StateGap,
    /// Largest gap divided by the solver's state scales.
    pub scaled_gap: f64,
    pub max_position_gap_km: f64,
    pub final_mass_gap_kg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub scenario: String,
    pub mode: ObjectiveMode,
    pub hours: f64,
    pub steps: usize,
    pub dt_s: f64,
    pub trajectory: TrajectoryMetrics,
    pub solver: SolverSummary,
    pub replay: ReplayReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<Search>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wind_fit: Option<FitReport>,
    pub aircraft: AircraftParams,
    pub weights: Weights,
    pub fuel_weight: f64,
}

pub struct Bundle {
    pub trajectory_csv: String,
    pub geojson: serde_json::Value,
    pub solver_log: String,
    pub scenario_json: String,
    pub metrics: Metrics,
}

impl Bundle {
    pub fn build(
        scenario: &Scenario,
        hours: f64,
        inst: &NlpInstance,
        result: &SolveResult,
        search: Option<Search>,
        wind_fit: Option<FitReport>,
    ) -> flightopt_core::Result<Self> {
        let proj = scenario.projection()?;
        let layout = inst.layout();
        let states = layout.states(&result.z);
        let controls = layout.controls(&result.z);
        let dt = inst.problem().dt;
        let trajectory = sim::metrics(&states, None, dt)?;
        let rep = replay(inst, &result.z, Stepper::Euler)?;
        let last = states.len() - 1;
        let replay = ReplayReport {
            stepper: Stepper::Euler,
            max_gap: StateGap::from_array(rep.max_gap),
            scaled_gap: rep.scaled_gap,
            max_position_gap_km: rep.max_position_gap_km(inst, &result.z),
            final_mass_gap_kg: (rep.trajectory[last].m - states[last].m).abs(),
        };
        let metrics = Metrics {
            scenario: scenario.name.clone(),
            mode: scenario.mode,
            hours,
            steps: inst.problem().steps,
            dt_s: dt,
            trajectory,
            solver: SolverSummary {
                status: result.status,
                objective: result.objective,
                feas_norm: result.feas_norm,
                stat_norm: result.stat_norm,
                outer_iters: result.outer_iters,
                inner_iters: result.inner_iters,
                clipped_initial_guess: result.clipped,
            },
            replay,
            search,
            wind_fit,
            aircraft: scenario.aircraft,
            weights: scenario.weights(),
            fuel_weight: scenario.fuel_weight,
        };
        let points: Vec<_> = states.iter().map(State::position).collect();
        let properties = serde_json::json!({
            "name": scenario.name,
            "status": result.status,
            "hours": hours,
            "fuel_burned_kg": metrics.trajectory.fuel_burned_kg,
        });
        Ok(Bundle {
            trajectory_csv: trajectory_csv(&states, &controls, dt, &proj),
            geojson: geojson(&points, &proj, properties),
            solver_log: format_log(&result.history),
            scenario_json: scenario.to_json(),
            metrics,
        })
    }

    pub fn write(&self, dir: &Path) -> flightopt_core::Result<()> {
        write_atomic(&dir.join(TRAJECTORY), self.trajectory_csv.as_bytes())?;
        write_json(&dir.join(GEOJSON), &self.geojson)?;
        write_atomic(&dir.join(SOLVER_LOG), self.solver_log.as_bytes())?;
        write_atomic(&dir.join(SCENARIO), self.scenario_json.as_bytes())?;
        write_json(&dir.join(METRICS), &self.metrics)
    }
}

pub struct Loaded {
    pub scenario: Scenario,
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub dt: f64,
}

pub fn load(dir: &Path) -> anyhow::Result<Loaded> {
    let scenario = Scenario::load(&dir.join(SCENARIO)).context("reading bundle scenario")?;
    let (states, controls, times) =
        export::read_trajectory_csv(&dir.join(TRAJECTORY)).context("reading bundle trajectory")?;
    let dt = times[1] - times[0];
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        bail!("{}: node times are not evenly spaced", dir.join(TRAJECTORY).display());
    }
    Ok(Loaded {
        scenario,
        states,
        controls,
        dt,
    })
}

pub fn replay_report(loaded: &Loaded, replayed: &[State], stepper: Stepper) -> flightopt_core::Result<ReplayReport> {
    if replayed.len() != loaded.states.len() {
        return Err(flightopt_core::Error::Dimension {
            expected: loaded.states.len(),
            actual: replayed.len(),
        });
    }
    let mut gap = [0.0f64; 5];
    let mut position = 0.0f64;
    for (a, b) in replayed.iter().zip(&loaded.states) {
        let (x, y) = (a.to_array(), b.to_array());
        for j in 0..5 {
            gap[j] = gap[j].max((x[j] - y[j]).abs());
        }
        position = position.max(a.position().distance(&b.position()));
    }
    let last = replayed.len() - 1;
    Ok(ReplayReport {
        stepper,
        max_gap: StateGap::from_array(gap),
        scaled_gap: (0..5).map(|j| gap[j] / STATE_SCALE[j]).fold(0.0, f64::max),
        max_position_gap_km: position,
        final_mass_gap_kg: (replayed[last].m - loaded.states[last].m).abs(),
    })
}
