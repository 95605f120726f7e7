//! 2D point-mass aircraft model with turn rate as a control input.
//!
//! Position is carried in km, speeds and wind in m/s, so the kinematic rows
//! of the vector field carry a single factor of 1/1000.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::PlanePoint;
use crate::wind::PolynomialWindField;

pub const STATE_DIM: usize = 5;
pub const CONTROL_DIM: usize = 2;

/// m/s · s → km
pub(crate) const KM_PER_M: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftParams {
    /// Drag coefficient, dimensionless.
    pub drag_coefficient: f64,
    /// Air density, kg/m³.
    pub air_density: f64,
    /// Reference wing area, m².
    pub wing_area: f64,
    /// Thrust-specific fuel consumption, kg/(N·s).
    pub tsfc: f64,
    /// m/s².
    pub gravity: f64,
    /// Mass may not drop below this, kg.
    pub dry_mass: f64,
}

impl Default for AircraftParams {
    /// A320-class placeholders at a 250 mb cruise level.
    fn default() -> Self {
        AircraftParams {
            drag_coefficient: 0.025,
            air_density: 0.38,
            wing_area: 122.6,
            tsfc: 1.6e-5,
            gravity: 9.81,
            dry_mass: 55_000.0,
        }
    }
}

impl AircraftParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("drag_coefficient", self.drag_coefficient),
            ("air_density", self.air_density),
            ("wing_area", self.wing_area),
            ("tsfc", self.tsfc),
            ("gravity", self.gravity),
            ("dry_mass", self.dry_mass),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "aircraft parameter {name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// `C_d ρ A`, the lumped drag factor (drag force is half of this times v²).
    pub fn drag_factor(&self) -> f64 {
        self.drag_coefficient * self.air_density * self.wing_area
    }

    /// Thrust that balances drag at speed `v`.
    pub fn trim_thrust(&self, v: f64) -> f64 {
        0.5 * self.drag_factor() * v * v
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// km east of the origin.
    pub x: f64,
    /// km north of the origin.
    pub y: f64,
    /// Ground-frame speed, m/s.
    pub v: f64,
    /// kg
    pub m: f64,
    /// Heading, rad, east = 0, counterclockwise positive. Never wrapped.
    pub theta: f64,
}

impl State {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.x, self.y, self.v, self.m, self.theta]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        State {
            x: a[0],
            y: a[1],
            v: a[2],
            m: a[3],
            theta: a[4],
        }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        State {
            x: s[0],
            y: s[1],
            v: s[2],
            m: s[3],
            theta: s[4],
        }
    }

    pub fn position(&self) -> PlanePoint {
        PlanePoint::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// N
    pub thrust: f64,
    /// rad/s
    pub turn_rate: f64,
}

impl Control {
    pub fn to_array(&self) -> [f64; CONTROL_DIM] {
        [self.thrust, self.turn_rate]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Control {
            thrust: s[0],
            turn_rate: s[1],
        }
    }
}

/// Time derivative of [`State`]. `dx`, `dy` are km/s (the 1/1000 factor is
/// already applied); `dv` m/s², `dm` kg/s, `dtheta` rad/s.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Derivative {
    pub dx: f64,
    pub dy: f64,
    pub dv: f64,
    pub dm: f64,
    pub dtheta: f64,
}

impl Derivative {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.dx, self.dy, self.dv, self.dm, self.dtheta]
    }
}

/// The vector field without domain checks; callers guarantee `m > 0`.
pub(crate) fn vector_field(s: &[f64], u: &[f64], wind: (f64, f64), p: &AircraftParams) -> [f64; STATE_DIM] {
    let (v, m, theta) = (s[2], s[3], s[4]);
    let (thrust, turn_rate) = (u[0], u[1]);
    let (sin, cos) = theta.sin_cos();
    [
        (v * cos + wind.0) * KM_PER_M,
        (v * sin + wind.1) * KM_PER_M,
        (2.0 * thrust - p.drag_factor() * v * v) / (2.0 * m),
        -p.tsfc * thrust,
        turn_rate,
    ]
}

pub fn continuous_dynamics(s: &State, u: &Control, wind: (f64, f64), p: &AircraftParams) -> Result<Derivative> {
    if !(s.m > 0.0) {
        return Err(Error::Domain(format!("mass must be positive, got {}", s.m)));
    }
    let d = vector_field(&s.to_array(), &u.to_array(), wind, p);
    Ok(Derivative {
        dx: d[0],
        dy: d[1],
        dv: d[2],
        dm: d[3],
        dtheta: d[4],
    })
}

fn field_at(s: &State, u: &Control, field: &PolynomialWindField, p: &AircraftParams) -> Result<[f64; STATE_DIM]> {
    continuous_dynamics(s, u, field.eval(s.position()), p).map(|d| d.to_array())
}

fn advance(s: &State, d: [f64; STATE_DIM], h: f64) -> State {
    let a = s.to_array();
    State::from_array(std::array::from_fn(|i| a[i] + h * d[i]))
}

fn check_mass(s: State, p: &AircraftParams) -> Result<State> {
    if s.m < p.dry_mass {
        return Err(Error::MassDepleted {
            mass: s.m,
            dry_mass: p.dry_mass,
        });
    }
    Ok(s)
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// `s + dt · f(s, u, w(s))` with wind sampled at the current position.
pub fn euler_step(s: &State, u: &Control, field: &PolynomialWindField, dt: f64, p: &AircraftParams) -> Result<State> {
    check_step(dt)?;
    let d = field_at(s, u, field, p)?;
    check_mass(advance(s, d, dt), p)
}

/// Classical RK4 with the control held over the step.
pub fn rk4_step(s: &State, u: &Control, field: &PolynomialWindField, dt: f64, p: &AircraftParams) -> Result<State> {
    check_step(dt)?;
    let k1 = field_at(s, u, field, p)?;
    let k2 = field_at(&advance(s, k1, dt / 2.0), u, field, p)?;
    let k3 = field_at(&advance(s, k2, dt / 2.0), u, field, p)?;
    let k4 = field_at(&advance(s, k3, dt), u, field, p)?;
    let d = std::array::from_fn(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0);
    check_mass(advance(s, d, dt), p)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    #[default]
    Euler,
    Rk4,
}

impl Stepper {
    pub fn step(
        self,
        s: &State,
        u: &Control,
        field: &PolynomialWindField,
        dt: f64,
        p: &AircraftParams,
    ) -> Result<State> {
        match self {
            Stepper::Euler => euler_step(s, u, field, dt, p),
            Stepper::Rk4 => rk4_step(s, u, field, dt, p),
        }
    }
}

/// Integrates `controls` from `s0`; returns `controls.len() + 1` states.
pub fn simulate(
    s0: &State,
    controls: &[Control],
    field: &PolynomialWindField,
    dt: f64,
    p: &AircraftParams,
    stepper: Stepper,
) -> Result<Vec<State>> {
    if controls.is_empty() {
        return Err(Error::InvalidInput("simulate needs at least one control".into()));
    }
    let mut traj = Vec::with_capacity(controls.len() + 1);
    traj.push(*s0);
    for (index, u) in controls.iter().enumerate() {
        let next = stepper.step(&traj[index], u, field, dt, p).map_err(|e| Error::Step {
            index,
            source: Box::new(e),
        })?;
        traj.push(next);
    }
    Ok(traj)
}

/// `∂f/∂s` (5×5) and `∂f/∂u` (5×2) of the continuous vector field, including
/// the wind terms through the position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobians {
    pub state: [[f64; STATE_DIM]; STATE_DIM],
    pub control: [[f64; CONTROL_DIM]; STATE_DIM],
}

pub(crate) fn raw_jacobians(s: &[f64], u: &[f64], wind_jac: [[f64; 2]; 2], p: &AircraftParams) -> Jacobians {
    let (v, m, theta) = (s[2], s[3], s[4]);
    let thrust = u[0];
    let (sin, cos) = theta.sin_cos();
    let k = p.drag_factor();
    let mut a = [[0.0; STATE_DIM]; STATE_DIM];
    a[0][0] = wind_jac[0][0] * KM_PER_M;
    a[0][1] = wind_jac[0][1] * KM_PER_M;
    a[0][2] = cos * KM_PER_M;
    a[0][4] = -v * sin * KM_PER_M;
    a[1][0] = wind_jac[1][0] * KM_PER_M;
    a[1][1] = wind_jac[1][1] * KM_PER_M;
    a[1][2] = sin * KM_PER_M;
    a[1][4] = v * cos * KM_PER_M;
    a[2][2] = -k * v / m;
    a[2][3] = -(2.0 * thrust - k * v * v) / (2.0 * m * m);
    let mut b = [[0.0; CONTROL_DIM]; STATE_DIM];
    b[2][0] = 1.0 / m;
    b[3][0] = -p.tsfc;
    b[4][1] = 1.0;
    Jacobians { state: a, control: b }
}

pub fn jacobians(s: &State, u: &Control, field: &PolynomialWindField, p: &AircraftParams) -> Result<Jacobians> {
    if !(s.m > 0.0) {
        return Err(Error::Domain(format!("mass must be positive, got {}", s.m)));
    }
    Ok(raw_jacobians(
        &s.to_array(),
        &u.to_array(),
        field.jacobian(s.position()),
        p,
    ))
}

/// Second derivatives of each vector-field component with respect to the
/// stacked node `(x, y, v, m, θ, thrust, turn rate)`.
pub type NodeHessians = [[[f64; STATE_DIM + CONTROL_DIM]; STATE_DIM + CONTROL_DIM]; STATE_DIM];

pub(crate) fn raw_hessians(s: &[f64], u: &[f64], wind_hess: [[[f64; 2]; 2]; 2], p: &AircraftParams) -> NodeHessians {
    let (v, m, theta) = (s[2], s[3], s[4]);
    let thrust = u[0];
    let (sin, cos) = theta.sin_cos();
    let k = p.drag_factor();
    let mut h = [[[0.0; STATE_DIM + CONTROL_DIM]; STATE_DIM + CONTROL_DIM]; STATE_DIM];
    for comp in 0..2 {
        for r in 0..2 {
            for c in 0..2 {
                h[comp][r][c] = wind_hess[comp][r][c] * KM_PER_M;
            }
        }
    }
    h[0][2][4] = -sin * KM_PER_M;
    h[0][4][2] = h[0][2][4];
    h[0][4][4] = -v * cos * KM_PER_M;
    h[1][2][4] = cos * KM_PER_M;
    h[1][4][2] = h[1][2][4];
    h[1][4][4] = -v * sin * KM_PER_M;

    h[2][2][2] = -k / m;
    h[2][2][3] = k * v / (m * m);
    h[2][3][2] = h[2][2][3];
    h[2][3][3] = (2.0 * thrust - k * v * v) / (m * m * m);
    h[2][3][5] = -1.0 / (m * m);
    h[2][5][3] = h[2][3][5];
    h
}

pub fn hessians(s: &State, u: &Control, field: &PolynomialWindField, p: &AircraftParams) -> Result<NodeHessians> {
    if !(s.m > 0.0) {
        return Err(Error::Domain(format!("mass must be positive, got {}", s.m)));
    }
    Ok(raw_hessians(
        &s.to_array(),
        &u.to_array(),
        field.hessian(s.position()),
        p,
    ))
}

/// Bank angle that produces `turn_rate` in a coordinated turn at speed `v`.
pub fn bank_angle(v: f64, turn_rate: f64, p: &AircraftParams) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Domain(format!("bank angle needs positive speed, got {v}")));
    }
    Ok((v * turn_rate / p.gravity).atan())
}
