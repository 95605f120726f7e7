//! Constrained finite-time optimal control for 2D point-mass flight.
//!
//! The pipeline runs in this order:
//!
//! 1. [`geo`] projects longitude/latitude onto a kilometre plane anchored at
//!    the departure airport.
//! 2. [`wind`] averages gridded wind samples and fits the two polynomial wind
//!    surfaces used by the dynamics.
//! 3. [`dynamics`] holds the point-mass model, its Euler/RK4 steppers and
//!    analytic Jacobians.
//! 4. [`transcription`] turns one horizon into a sparse NLP with defect
//!    constraints.
//! 5. [`solver`] solves that NLP with an augmented Lagrangian method and runs
//!    the minimum-time horizon search.
//! 6. [`sim`] replays and scores the result; [`export`] writes plot-ready
//!    files.

pub mod dynamics;
pub mod error;
pub mod export;
pub mod geo;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod sparse;
pub mod transcription;
pub mod wind;

pub use dynamics::{AircraftParams, Control, Derivative, State, Stepper};
pub use error::{Error, Result};
pub use geo::{GeoPoint, PlanePoint, Projection};
pub use scenario::Scenario;
pub use sim::{TrackPoint, TrajectoryMetrics};
pub use solver::{SolveResult, SolveStatus, SolverOptions};
pub use transcription::{CftocProblem, NlpInstance, ObjectiveMode};
pub use wind::{FitReport, PolynomialWindField, WindBasis, WindSample};
