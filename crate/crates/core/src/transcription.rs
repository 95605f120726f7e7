//! Direct transcription of the fixed-horizon flight problem into a sparse NLP.
//!
//! The decision vector interleaves nodes as `[X_0, U_0, X_1, U_1, …, U_{N-1}, X_N]`,
//! so `n = 5(N+1) + 2N`. Equality rows are the `5N` forward-Euler defects
//! `X_{k+1} − X_k − dT·f(X_k, U_k, w(X_k))`, then `X_0 − 𝒳₀`, then (only when
//! `terminal_slack == 0`) `(x_N, y_N) − (x_f, y_f)`. With a positive slack the
//! terminal position is instead boxed to `x_f ± slack`, `y_f ± slack` through
//! the variable bounds.

use nalgebra::{Matrix2, Matrix5};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    raw_hessians, raw_jacobians, vector_field, AircraftParams, Control, State, CONTROL_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::solver::Nlp;
use crate::sparse::SparseMatrix;
use crate::wind::PolynomialWindField;

const NODE: usize = STATE_DIM + CONTROL_DIM;

pub const STATE_NAMES: [&str; STATE_DIM] = ["x", "y", "v", "m", "theta"];
pub const CONTROL_NAMES: [&str; CONTROL_DIM] = ["thrust", "turn_rate"];

/// Characteristic magnitudes used to scale the NLP for the solver.
pub const STATE_SCALE: [f64; STATE_DIM] = [1e3, 1e3, 1e2, 1e4, 1.0];
pub const CONTROL_SCALE: [f64; CONTROL_DIM] = [1e5, 1e-3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Quadratic tracking of the destination plus control effort.
    #[default]
    Time,
    /// The same quadratic terms plus `fuel_weight · (m₀ − m_N)`.
    Fuel,
}

/// Tracking weight on the (x, y) position, per km².
pub fn default_position_weight(mode: ObjectiveMode) -> f64 {
    match mode {
        ObjectiveMode::Time => 1e-2,
        ObjectiveMode::Fuel => 1e-4,
    }
}

/// `diag(1e-10, 1e2)` on (thrust in N, turn rate in rad/s).
pub const DEFAULT_CONTROL_WEIGHTS: [f64; CONTROL_DIM] = [1e-10, 1e2];

pub fn diag5(d: [f64; STATE_DIM]) -> [[f64; STATE_DIM]; STATE_DIM] {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { d[i] } else { 0.0 }))
}

pub fn diag2(d: [f64; CONTROL_DIM]) -> [[f64; CONTROL_DIM]; CONTROL_DIM] {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { d[i] } else { 0.0 }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CftocProblem {
    pub steps: usize,
    /// Step size, s.
    pub dt: f64,
    pub initial: State,
    /// Destination; also the tracking target of the cost.
    pub target: State,
    pub state_lower: [f64; STATE_DIM],
    pub state_upper: [f64; STATE_DIM],
    pub control_lower: [f64; CONTROL_DIM],
    pub control_upper: [f64; CONTROL_DIM],
    pub q: [[f64; STATE_DIM]; STATE_DIM],
    pub r: [[f64; CONTROL_DIM]; CONTROL_DIM],
    pub mode: ObjectiveMode,
    /// Cost per kg of fuel in fuel mode.
    pub fuel_weight: f64,
    /// Half-width of the terminal position box, km. Zero means exact equality.
    pub terminal_slack: f64,
}

fn symmetric<const D: usize>(m: &[[f64; D]; D]) -> bool {
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    (0..D).all(|i| (0..D).all(|j| (m[i][j] - m[j][i]).abs() <= 1e-12 * scale))
}

impl CftocProblem {
    pub fn total_seconds(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn total_hours(&self) -> f64 {
        self.total_seconds() / 3600.0
    }

    /// Same problem with the step size stretched to cover `hours`.
    pub fn with_total_hours(&self, hours: f64) -> Self {
        CftocProblem {
            dt: hours * 3600.0 / self.steps as f64,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 steps, got {}",
                self.steps
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        for j in 0..STATE_DIM {
            let (lo, hi) = (self.state_lower[j], self.state_upper[j]);
            if !(lo <= hi) {
                return Err(Error::InvalidInput(format!(
                    "state bound on {}: lower {lo} > upper {hi}",
                    STATE_NAMES[j]
                )));
            }
            for (which, s) in [("initial", &self.initial), ("target", &self.target)] {
                let val = s.to_array()[j];
                if !(lo <= val && val <= hi) {
                    return Err(Error::InvalidInput(format!(
                        "{which} {} = {val} outside [{lo}, {hi}]",
                        STATE_NAMES[j]
                    )));
                }
            }
        }
        for j in 0..CONTROL_DIM {
            let (lo, hi) = (self.control_lower[j], self.control_upper[j]);
            if !(lo <= hi) {
                return Err(Error::InvalidInput(format!(
                    "control bound on {}: lower {lo} > upper {hi}",
                    CONTROL_NAMES[j]
                )));
            }
        }
        if !symmetric(&self.q) || !symmetric(&self.r) {
            return Err(Error::InvalidInput("weight matrices Q and R must be symmetric".into()));
        }
        let q = Matrix5::from_fn(|i, j| self.q[i][j]);
        let q_min = q.symmetric_eigenvalues().min();
        if q_min < -1e-12 * q.amax().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "Q is not positive semidefinite (eigenvalue {q_min:e})"
            )));
        }
        let r = Matrix2::from_fn(|i, j| self.r[i][j]);
        let r_min = r.symmetric_eigenvalues().min();
        if !(r_min > 0.0) {
            return Err(Error::InvalidInput(format!(
                "R is not positive definite (eigenvalue {r_min:e})"
            )));
        }
        if !(self.fuel_weight >= 0.0 && self.terminal_slack >= 0.0) {
            return Err(Error::InvalidInput(
                "fuel weight and terminal slack must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Flat index map of the interleaved decision vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecisionLayout {
    pub steps: usize,
}

impl DecisionLayout {
    pub fn len(&self) -> usize {
        NODE * self.steps + STATE_DIM
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self, k: usize, j: usize) -> usize {
        debug_assert!(k <= self.steps && j < STATE_DIM);
        NODE * k + j
    }

    pub fn control(&self, k: usize, j: usize) -> usize {
        debug_assert!(k < self.steps && j < CONTROL_DIM);
        NODE * k + STATE_DIM + j
    }

    pub fn state_slice<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        &z[NODE * k..NODE * k + STATE_DIM]
    }

    pub fn control_slice<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        &z[NODE * k + STATE_DIM..NODE * (k + 1)]
    }

    pub fn states(&self, z: &[f64]) -> Vec<State> {
        (0..=self.steps)
            .map(|k| State::from_slice(self.state_slice(z, k)))
            .collect()
    }

    pub fn controls(&self, z: &[f64]) -> Vec<Control> {
        (0..self.steps)
            .map(|k| Control::from_slice(self.control_slice(z, k)))
            .collect()
    }

    pub fn pack(&self, states: &[State], controls: &[Control]) -> Result<Vec<f64>> {
        if states.len() != self.steps + 1 {
            return Err(Error::Dimension {
                expected: self.steps + 1,
                actual: states.len(),
            });
        }
        if controls.len() != self.steps {
            return Err(Error::Dimension {
                expected: self.steps,
                actual: controls.len(),
            });
        }
        let mut z = Vec::with_capacity(self.len());
        for k in 0..self.steps {
            z.extend(states[k].to_array());
            z.extend(controls[k].to_array());
        }
        z.extend(states[self.steps].to_array());
        Ok(z)
    }
}

// Structural nonzeros of one defect row against (X_k, U_k).
const ROW_STATE_COLS: [&[usize]; STATE_DIM] = [&[0, 1, 2, 4], &[0, 1, 2, 4], &[2, 3], &[3], &[4]];
const ROW_CONTROL_COLS: [&[usize]; STATE_DIM] = [&[], &[], &[0], &[0], &[1]];

#[derive(Clone, Debug)]
pub struct NlpInstance {
    problem: CftocProblem,
    field: PolynomialWindField,
    params: AircraftParams,
    layout: DecisionLayout,
    lower: Vec<f64>,
    upper: Vec<f64>,
    jac_rows: Vec<usize>,
    jac_cols: Vec<usize>,
    hess_rows: Vec<usize>,
    hess_cols: Vec<usize>,
    num_constraints: usize,
}

/// Starting point together with how many entries had to be pulled into bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    pub z: Vec<f64>,
    pub clipped: usize,
}

fn check_len(z: &[f64], n: usize) -> Result<()> {
    if z.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: z.len(),
        });
    }
    Ok(())
}

impl NlpInstance {
    pub fn build(problem: CftocProblem, field: PolynomialWindField, params: AircraftParams) -> Result<Self> {
        problem.validate()?;
        field.validate()?;
        params.validate()?;
        let layout = DecisionLayout { steps: problem.steps };
        let n = layout.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for k in 0..=problem.steps {
            for j in 0..STATE_DIM {
                lower[layout.state(k, j)] = problem.state_lower[j];
                upper[layout.state(k, j)] = problem.state_upper[j];
            }
            if k < problem.steps {
                for j in 0..CONTROL_DIM {
                    lower[layout.control(k, j)] = problem.control_lower[j];
                    upper[layout.control(k, j)] = problem.control_upper[j];
                }
            }
        }
        let slack = problem.terminal_slack;
        if slack > 0.0 {
            let target = problem.target.to_array();
            for j in 0..2 {
                let i = layout.state(problem.steps, j);
                lower[i] = lower[i].max(target[j] - slack);
                upper[i] = upper[i].min(target[j] + slack);
            }
        }

        let steps = problem.steps;
        let mut jac_rows = Vec::new();
        let mut jac_cols = Vec::new();
        for k in 0..steps {
            for j in 0..STATE_DIM {
                let row = STATE_DIM * k + j;
                for &i in ROW_STATE_COLS[j] {
                    jac_rows.push(row);
                    jac_cols.push(layout.state(k, i));
                }
                for &i in ROW_CONTROL_COLS[j] {
                    jac_rows.push(row);
                    jac_cols.push(layout.control(k, i));
                }
                jac_rows.push(row);
                jac_cols.push(layout.state(k + 1, j));
            }
        }
        let mut num_constraints = STATE_DIM * steps;
        for j in 0..STATE_DIM {
            jac_rows.push(num_constraints + j);
            jac_cols.push(layout.state(0, j));
        }
        num_constraints += STATE_DIM;
        if slack == 0.0 {
            for j in 0..2 {
                jac_rows.push(num_constraints + j);
                jac_cols.push(layout.state(steps, j));
            }
            num_constraints += 2;
        }

        // second derivatives only couple variables of the same (X_k, U_k) block
        let mut hess_rows = Vec::new();
        let mut hess_cols = Vec::new();
        for k in 0..steps {
            for a in 0..NODE {
                for b in 0..=a {
                    hess_rows.push(NODE * k + a);
                    hess_cols.push(NODE * k + b);
                }
            }
        }

        Ok(NlpInstance {
            problem,
            field,
            params,
            layout,
            lower,
            upper,
            jac_rows,
            jac_cols,
            hess_rows,
            hess_cols,
            num_constraints,
        })
    }

    pub fn problem(&self) -> &CftocProblem {
        &self.problem
    }

    pub fn field(&self) -> &PolynomialWindField {
        &self.field
    }

    pub fn params(&self) -> &AircraftParams {
        &self.params
    }

    pub fn layout(&self) -> DecisionLayout {
        self.layout
    }

    pub fn dimension(&self) -> usize {
        self.layout.len()
    }

    pub fn num_defects(&self) -> usize {
        STATE_DIM * self.problem.steps
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    pub fn objective(&self, z: &[f64]) -> Result<f64> {
        check_len(z, self.dimension())?;
        Ok(self.eval_objective(z))
    }

    pub fn objective_gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(z, self.dimension())?;
        let mut g = vec![0.0; z.len()];
        self.eval_gradient(z, &mut g);
        Ok(g)
    }

    pub fn constraints(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(z, self.dimension())?;
        let mut c = vec![0.0; self.num_constraints];
        self.eval_constraints(z, &mut c);
        Ok(c)
    }

    pub fn constraint_jacobian(&self, z: &[f64]) -> Result<SparseMatrix> {
        check_len(z, self.dimension())?;
        let mut values = vec![0.0; self.jac_rows.len()];
        self.eval_jacobian(z, &mut values);
        Ok(SparseMatrix {
            nrows: self.num_constraints,
            ncols: self.dimension(),
            rows: self.jac_rows.clone(),
            cols: self.jac_cols.clone(),
            values,
        })
    }

    /// Lower triangle of `obj_factor·∇²f + Σ λᵢ ∇²cᵢ`.
    pub fn lagrangian_hessian(&self, z: &[f64], obj_factor: f64, lambda: &[f64]) -> Result<SparseMatrix> {
        check_len(z, self.dimension())?;
        check_len(lambda, self.num_constraints)?;
        let mut values = vec![0.0; self.hess_rows.len()];
        self.eval_hessian(z, obj_factor, lambda, &mut values);
        Ok(SparseMatrix {
            nrows: self.dimension(),
            ncols: self.dimension(),
            rows: self.hess_rows.clone(),
            cols: self.hess_cols.clone(),
            values,
        })
    }

    fn eval_hessian(&self, z: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        let p = &self.problem;
        let mut at = 0;
        for k in 0..p.steps {
            let s = self.layout.state_slice(z, k);
            let u = self.layout.control_slice(z, k);
            let wind_hess = self.field.hessian(crate::geo::PlanePoint::new(s[0], s[1]));
            let h = raw_hessians(s, u, wind_hess, &self.params);
            let mult = &lambda[STATE_DIM * k..STATE_DIM * (k + 1)];
            for a in 0..NODE {
                for b in 0..=a {
                    let mut v = if a < STATE_DIM {
                        p.q[a][b] + p.q[b][a]
                    } else if b >= STATE_DIM {
                        p.r[a - STATE_DIM][b - STATE_DIM] + p.r[b - STATE_DIM][a - STATE_DIM]
                    } else {
                        0.0
                    } * obj_factor;
                    for j in 0..STATE_DIM {
                        v -= mult[j] * p.dt * h[j][a][b];
                    }
                    values[at] = v;
                    at += 1;
                }
            }
        }
    }

    fn eval_objective(&self, z: &[f64]) -> f64 {
        let p = &self.problem;
        let target = p.target.to_array();
        let mut total = 0.0;
        for k in 0..p.steps {
            let s = self.layout.state_slice(z, k);
            let e: [f64; STATE_DIM] = std::array::from_fn(|i| s[i] - target[i]);
            for i in 0..STATE_DIM {
                for j in 0..STATE_DIM {
                    total += e[i] * p.q[i][j] * e[j];
                }
            }
            let u = self.layout.control_slice(z, k);
            for i in 0..CONTROL_DIM {
                for j in 0..CONTROL_DIM {
                    total += u[i] * p.r[i][j] * u[j];
                }
            }
        }
        if p.mode == ObjectiveMode::Fuel {
            total += p.fuel_weight * (p.initial.m - z[self.layout.state(p.steps, 3)]);
        }
        total
    }

    fn eval_gradient(&self, z: &[f64], g: &mut [f64]) {
        let p = &self.problem;
        let target = p.target.to_array();
        g.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..p.steps {
            let s = self.layout.state_slice(z, k);
            for i in 0..STATE_DIM {
                let mut acc = 0.0;
                for j in 0..STATE_DIM {
                    acc += (p.q[i][j] + p.q[j][i]) * (s[j] - target[j]);
                }
                g[self.layout.state(k, i)] = acc;
            }
            let u = self.layout.control_slice(z, k);
            for i in 0..CONTROL_DIM {
                let mut acc = 0.0;
                for j in 0..CONTROL_DIM {
                    acc += (p.r[i][j] + p.r[j][i]) * u[j];
                }
                g[self.layout.control(k, i)] = acc;
            }
        }
        if p.mode == ObjectiveMode::Fuel {
            g[self.layout.state(p.steps, 3)] -= p.fuel_weight;
        }
    }

    fn eval_constraints(&self, z: &[f64], c: &mut [f64]) {
        let p = &self.problem;
        for k in 0..p.steps {
            let s = self.layout.state_slice(z, k);
            let u = self.layout.control_slice(z, k);
            let next = self.layout.state_slice(z, k + 1);
            let wind = self.field.eval(crate::geo::PlanePoint::new(s[0], s[1]));
            let f = vector_field(s, u, wind, &self.params);
            for j in 0..STATE_DIM {
                c[STATE_DIM * k + j] = next[j] - s[j] - p.dt * f[j];
            }
        }
        let mut row = self.num_defects();
        let x0 = p.initial.to_array();
        let first = self.layout.state_slice(z, 0);
        for j in 0..STATE_DIM {
            c[row + j] = first[j] - x0[j];
        }
        row += STATE_DIM;
        if p.terminal_slack == 0.0 {
            let last = self.layout.state_slice(z, p.steps);
            c[row] = last[0] - p.target.x;
            c[row + 1] = last[1] - p.target.y;
        }
    }

    fn eval_jacobian(&self, z: &[f64], values: &mut [f64]) {
        let p = &self.problem;
        let mut at = 0;
        for k in 0..p.steps {
            let s = self.layout.state_slice(z, k);
            let u = self.layout.control_slice(z, k);
            let wind_jac = self.field.jacobian(crate::geo::PlanePoint::new(s[0], s[1]));
            let jac = raw_jacobians(s, u, wind_jac, &self.params);
            for j in 0..STATE_DIM {
                for &i in ROW_STATE_COLS[j] {
                    let identity = if i == j { 1.0 } else { 0.0 };
                    values[at] = -identity - p.dt * jac.state[j][i];
                    at += 1;
                }
                for &i in ROW_CONTROL_COLS[j] {
                    values[at] = -p.dt * jac.control[j][i];
                    at += 1;
                }
                values[at] = 1.0;
                at += 1;
            }
        }
        for v in values[at..].iter_mut() {
            *v = 1.0;
        }
    }

    /// Straight-line starting point: position and mass interpolate linearly
    /// from the initial to the target state, speed sits at the average of the
    /// two, heading points along the chord and thrust trims drag.
    pub fn initial_guess(&self) -> InitialGuess {
        let p = &self.problem;
        let (a, b) = (p.initial, p.target);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let heading = if dx == 0.0 && dy == 0.0 {
            a.theta
        } else {
            // pick the branch of atan2 closest to the initial heading
            let raw = dy.atan2(dx);
            let turns = ((a.theta - raw) / std::f64::consts::TAU).round();
            raw + turns * std::f64::consts::TAU
        };
        let speed = 0.5 * (a.v + b.v);
        let control = Control {
            thrust: self.params.trim_thrust(speed),
            turn_rate: 0.0,
        };
        let n = p.steps as f64;
        let states: Vec<State> = (0..=p.steps)
            .map(|k| {
                let t = k as f64 / n;
                State {
                    x: a.x + t * dx,
                    y: a.y + t * dy,
                    v: speed,
                    m: a.m + t * (b.m - a.m),
                    theta: heading,
                }
            })
            .collect();
        let mut z = self
            .layout
            .pack(&states, &vec![control; p.steps])
            .expect("layout sized from the problem");
        let mut clipped = 0;
        for ((zi, lo), hi) in z.iter_mut().zip(&self.lower).zip(&self.upper) {
            let c = zi.clamp(*lo, *hi);
            if c != *zi {
                clipped += 1;
                *zi = c;
            }
        }
        InitialGuess { z, clipped }
    }
}

impl Nlp for NlpInstance {
    fn num_variables(&self) -> usize {
        self.dimension()
    }

    fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.eval_objective(z)
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        self.eval_gradient(z, grad)
    }

    fn constraints(&self, z: &[f64], c: &mut [f64]) {
        self.eval_constraints(z, c)
    }

    fn jacobian_structure(&self) -> (&[usize], &[usize]) {
        (&self.jac_rows, &self.jac_cols)
    }

    fn jacobian_values(&self, z: &[f64], values: &mut [f64]) {
        self.eval_jacobian(z, values)
    }

    fn hessian_structure(&self) -> Option<(&[usize], &[usize])> {
        Some((&self.hess_rows, &self.hess_cols))
    }

    fn hessian_values(&self, z: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        self.eval_hessian(z, obj_factor, lambda, values)
    }

    fn variable_scaling(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.dimension());
        for k in 0..=self.problem.steps {
            s.extend(STATE_SCALE);
            if k < self.problem.steps {
                s.extend(CONTROL_SCALE);
            }
        }
        s
    }

    fn constraint_scaling(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.num_constraints);
        for _ in 0..=self.problem.steps {
            s.extend(STATE_SCALE);
        }
        if self.problem.terminal_slack == 0.0 {
            s.extend(&STATE_SCALE[..2]);
        }
        s
    }
}
