//! Run configuration loaded from a JSON file.
//!
//! A scenario names the two airports, the departure state, the aircraft, how
//! the horizon is chosen, the box bounds, cost weights, the wind source and
//! solver options. Unknown keys are rejected and every value is checked
//! against the downstream invariants when the file is loaded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{AircraftParams, State, CONTROL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Projection};
use crate::solver::SolverOptions;
use crate::transcription::{
    default_position_weight, diag2, diag5, CftocProblem, ObjectiveMode, DEFAULT_CONTROL_WEIGHTS,
};
use crate::wind::{self, FitReport, PolynomialWindField, WindBasis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Departure {
    pub speed_mps: f64,
    pub mass_kg: f64,
    /// Defaults to the heading of the straight line to the destination.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_rad: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Horizon {
    Fixed {
        hours: f64,
        steps: usize,
    },
    /// Shortest feasible time on the grid `min_hours, min_hours + step_hours, …, max_hours`.
    Search {
        min_hours: f64,
        max_hours: f64,
        step_hours: f64,
        steps: usize,
    },
}

impl Horizon {
    pub fn steps(&self) -> usize {
        match *self {
            Horizon::Fixed { steps, .. } | Horizon::Search { steps, .. } => steps,
        }
    }

    /// The horizon used to build a template problem.
    pub fn nominal_hours(&self) -> f64 {
        match *self {
            Horizon::Fixed { hours, .. } => hours,
            Horizon::Search { max_hours, .. } => max_hours,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    /// Half-width of the square position box around the origin, km.
    pub position_km: f64,
    pub speed_mps: [f64; 2],
    /// Defaults to `[dry mass, departure mass]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<[f64; 2]>,
    pub heading_rad: [f64; 2],
    pub thrust_n: [f64; 2],
    pub turn_rate_radps: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            position_km: 1e4,
            speed_mps: [100.0, 305.0],
            mass_kg: None,
            heading_rad: [-10.0, 10.0],
            thrust_n: [0.0, 2e5],
            turn_rate_radps: [-5e-3, 5e-3],
        }
    }
}

/// Diagonals of the tracking and control-effort weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    /// On (x, y, v, m, θ) deviations from the destination state.
    pub state: [f64; STATE_DIM],
    /// On (thrust, turn rate).
    pub control: [f64; CONTROL_DIM],
}

impl Weights {
    pub fn for_mode(mode: ObjectiveMode) -> Self {
        let w = default_position_weight(mode);
        Weights {
            state: [w, w, 0.0, 0.0, 0.0],
            control: DEFAULT_CONTROL_WEIGHTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindSpec {
    None,
    /// Samples fitted at load time. A relative path is taken from the
    /// directory holding the scenario file.
    Csv {
        path: PathBuf,
        #[serde(default)]
        basis: WindBasis,
    },
    Coefficients {
        #[serde(default)]
        basis: WindBasis,
        a: Vec<f64>,
        b: Vec<f64>,
    },
}

fn default_fuel_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub departure: Departure,
    #[serde(default)]
    pub aircraft: AircraftParams,
    pub horizon: Horizon,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub mode: ObjectiveMode,
    /// Defaults depend on `mode`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    #[serde(default = "default_fuel_weight")]
    pub fuel_weight: f64,
    #[serde(default)]
    pub terminal_slack_km: f64,
    pub wind: WindSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Scenario {
    /// Parses and validates. Wind CSV files are not read here; see
    /// [`Scenario::wind_field`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn from_json(text: &str, source: &Path) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Json {
            path: source.into(),
            source: e,
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn projection(&self) -> Result<Projection> {
        Projection::new(self.origin)
    }

    pub fn weights(&self) -> Weights {
        self.weights.clone().unwrap_or_else(|| Weights::for_mode(self.mode))
    }

    pub fn validate(&self) -> Result<()> {
        self.origin.validate()?;
        self.destination.validate()?;
        self.aircraft.validate()?;
        self.solver.validate()?;
        let d = &self.departure;
        if !(d.speed_mps.is_finite() && d.speed_mps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "departure speed must be positive, got {}",
                d.speed_mps
            )));
        }
        if !(d.mass_kg.is_finite() && d.mass_kg >= self.aircraft.dry_mass) {
            return Err(Error::InvalidInput(format!(
                "departure mass {} below dry mass {}",
                d.mass_kg, self.aircraft.dry_mass
            )));
        }
        if d.heading_rad.is_some_and(|h| !h.is_finite()) {
            return Err(Error::InvalidInput("departure heading must be finite".into()));
        }
        match self.horizon {
            Horizon::Fixed { hours, .. } => {
                if !(hours.is_finite() && hours > 0.0) {
                    return Err(Error::InvalidInput(format!("horizon must be positive, got {hours} h")));
                }
            }
            Horizon::Search {
                min_hours,
                max_hours,
                step_hours,
                ..
            } => {
                if !(min_hours > 0.0 && min_hours <= max_hours && max_hours.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "search range [{min_hours}, {max_hours}] h is empty or non-positive"
                    )));
                }
                if !(step_hours.is_finite() && step_hours > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "search step must be positive, got {step_hours} h"
                    )));
                }
            }
        }
        if !(self.bounds.position_km.is_finite() && self.bounds.position_km > 0.0) {
            return Err(Error::InvalidInput("position bound must be positive".into()));
        }
        if let WindSpec::Coefficients { basis, a, b } = &self.wind {
            PolynomialWindField::new(*basis, a.clone(), b.clone())?;
        }
        if let WindSpec::Csv { basis, .. } = &self.wind {
            basis.validate()?;
        }
        let w = self.weights();
        if w.state.iter().chain(&w.control).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite".into()));
        }
        self.problem(self.horizon.nominal_hours())?.validate()
    }

    /// Transcription problem for a horizon of `hours`.
    pub fn problem(&self, hours: f64) -> Result<CftocProblem> {
        let proj = self.projection()?;
        let dest = proj.project(self.destination)?;
        let steps = self.horizon.steps();
        let chord = dest.y.atan2(dest.x);
        let d = &self.departure;
        let initial = State {
            x: 0.0,
            y: 0.0,
            v: d.speed_mps,
            m: d.mass_kg,
            theta: d.heading_rad.unwrap_or(chord),
        };
        // the arrival mass only seeds the initial guess: burn at trim for the
        // whole horizon, never below dry
        let burn = self.aircraft.tsfc * self.aircraft.trim_thrust(d.speed_mps) * hours * 3600.0;
        let target = State {
            x: dest.x,
            y: dest.y,
            v: d.speed_mps,
            m: (d.mass_kg - burn).max(self.aircraft.dry_mass),
            theta: initial.theta,
        };
        let b = &self.bounds;
        let mass = b.mass_kg.unwrap_or([self.aircraft.dry_mass, d.mass_kg]);
        let w = self.weights();
        Ok(CftocProblem {
            steps,
            dt: hours * 3600.0 / steps as f64,
            initial,
            target,
            state_lower: [
                -b.position_km,
                -b.position_km,
                b.speed_mps[0],
                mass[0],
                b.heading_rad[0],
            ],
            state_upper: [b.position_km, b.position_km, b.speed_mps[1], mass[1], b.heading_rad[1]],
            control_lower: [b.thrust_n[0], b.turn_rate_radps[0]],
            control_upper: [b.thrust_n[1], b.turn_rate_radps[1]],
            q: diag5(w.state),
            r: diag2(w.control),
            mode: self.mode,
            fuel_weight: self.fuel_weight,
            terminal_slack: self.terminal_slack_km,
        })
    }

    /// Builds the wind field; a CSV source is read relative to `base_dir` and
    /// fitted, returning the fit diagnostics as well.
    pub fn wind_field(&self, base_dir: &Path) -> Result<(PolynomialWindField, Option<FitReport>)> {
        match &self.wind {
            WindSpec::None => Ok((PolynomialWindField::zero(WindBasis::Quartic), None)),
            WindSpec::Coefficients { basis, a, b } => {
                Ok((PolynomialWindField::new(*basis, a.clone(), b.clone())?, None))
            }
            WindSpec::Csv { path, basis } => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let samples = wind::ingest_csv(&path, &self.projection()?)?;
                let averaged = wind::average_slots(&samples)?;
                let (field, report) = wind::fit(&averaged, *basis)?;
                Ok((field, Some(report)))
            }
        }
    }
}
