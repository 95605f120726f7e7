//! Augmented-Lagrangian NLP solver for problems with smooth equality
//! constraints and simple bounds.
//!
//! Each outer iteration minimizes
//! `L(z; λ, μ) = f(z) + λᵀc(z) + (μ/2)‖c(z)‖²` over the box with the
//! inner method chosen in [`SolverOptions::inner`], then sets
//! `λ ← λ + μ c(z)`.
//! The penalty grows whenever the constraint violation fails to shrink by a
//! factor of four. Everything happens on a scaled copy of the problem:
//! variables and constraint rows are divided by [`Nlp::variable_scaling`] and
//! [`Nlp::constraint_scaling`], and the objective is multiplied by a factor
//! that caps its initial scaled gradient at
//! [`SolverOptions::max_scaled_gradient`].

mod lbfgsb;
mod newton;
mod search;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use search::{solve_fixed, solve_min_time, HorizonProbe, MinTimeResult};

/// Smooth NLP: `min f(z)  s.t.  c(z) = 0,  lb <= z <= ub`.
pub trait Nlp {
    fn num_variables(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn lower_bounds(&self) -> &[f64];
    fn upper_bounds(&self) -> &[f64];
    fn objective(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], grad: &mut [f64]);
    fn constraints(&self, z: &[f64], c: &mut [f64]);
    /// Row and column indices of the constraint Jacobian; constant in `z`.
    fn jacobian_structure(&self) -> (&[usize], &[usize]);
    /// Values matching [`Nlp::jacobian_structure`] entry for entry.
    fn jacobian_values(&self, z: &[f64], values: &mut [f64]);

    fn variable_scaling(&self) -> Vec<f64> {
        vec![1.0; self.num_variables()]
    }

    /// Row and column indices (row ≥ column) of the Lagrangian Hessian, when
    /// second derivatives are available. Repeated entries are summed.
    fn hessian_structure(&self) -> Option<(&[usize], &[usize])> {
        None
    }

    /// `obj_factor·∇²f + Σ λᵢ ∇²cᵢ` in the pattern of
    /// [`Nlp::hessian_structure`].
    fn hessian_values(&self, _z: &[f64], _obj_factor: f64, _lambda: &[f64], _values: &mut [f64]) {}

    fn constraint_scaling(&self) -> Vec<f64> {
        vec![1.0; self.num_constraints()]
    }
}

/// How each bound-constrained subproblem is minimized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Projected Newton on the exact banded Hessian of the augmented
    /// Lagrangian. Falls back to `Lbfgs` when the problem has no Hessian.
    #[default]
    Newton,
    /// Projected limited-memory quasi-Newton.
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Infinity norm of the scaled constraint residual.
    pub tol_feas: f64,
    /// Infinity norm of the scaled projected Lagrangian gradient.
    pub tol_stat: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub lbfgs_memory: usize,
    pub armijo: f64,
    pub inner: InnerMethod,
    /// The objective is multiplied by the largest factor ≤ 1 that keeps its
    /// scaled gradient at the starting point within this bound.
    pub max_scaled_gradient: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_outer: 50,
            max_inner: 200,
            tol_feas: 1e-6,
            tol_stat: 1e-6,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            lbfgs_memory: 10,
            armijo: 1e-4,
            inner: InnerMethod::Newton,
            max_scaled_gradient: 0.1,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_feas", self.tol_feas),
            ("tol_stat", self.tol_stat),
            ("penalty_init", self.penalty_init),
            ("penalty_max", self.penalty_max),
            ("armijo", self.armijo),
            ("max_scaled_gradient", self.max_scaled_gradient),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "solver option {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidInput(format!(
                "penalty_growth must exceed 1, got {}",
                self.penalty_growth
            )));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.lbfgs_memory == 0 {
            return Err(Error::InvalidInput(
                "iteration limits and memory must be nonzero".into(),
            ));
        }
        if !(self.armijo < 0.5) {
            return Err(Error::InvalidInput(format!(
                "armijo must be below 0.5, got {}",
                self.armijo
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    Infeasible,
    IterationLimit,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration-limit",
        })
    }
}

/// One outer iteration, as written to the solver log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iter: usize,
    pub objective: f64,
    pub feas_norm: f64,
    pub stat_norm: f64,
    pub penalty: f64,
    pub inner_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub z: Vec<f64>,
    /// Equality multipliers in the units of the unscaled problem, so that
    /// `∇f + Jᵀλ` vanishes on the free variables at a KKT point.
    pub multipliers: Vec<f64>,
    pub feas_norm: f64,
    pub stat_norm: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub objective: f64,
    /// Factor applied to the objective inside the solver.
    pub objective_scale: f64,
    /// Entries of the starting point that had to be moved into the box.
    pub clipped: usize,
    pub history: Vec<OuterIteration>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Tab-separated log, one line per outer iteration.
pub fn format_log(history: &[OuterIteration]) -> String {
    let mut out = String::from("iter\tobjective\tfeas_norm\tstat_norm\tpenalty\n");
    for it in history {
        out.push_str(&format!(
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\n",
            it.iter, it.objective, it.feas_norm, it.stat_norm, it.penalty
        ));
    }
    out
}

/// The problem as the solver sees it.
struct Scaled<'a, P: Nlp + ?Sized> {
    nlp: &'a P,
    var: Vec<f64>,
    con: Vec<f64>,
    sigma: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Jacobian entry indices grouped by row.
    row_entries: Vec<Vec<usize>>,
    hess: Option<(Vec<usize>, Vec<usize>)>,
    bandwidth: usize,
}

struct Buffers {
    z: Vec<f64>,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
    hess: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a, P: Nlp + ?Sized> Scaled<'a, P> {
    fn new(nlp: &'a P, sigma: f64) -> Self {
        let var = nlp.variable_scaling();
        let con = nlp.constraint_scaling();
        let lower = nlp.lower_bounds().iter().zip(&var).map(|(b, s)| b / s).collect();
        let upper = nlp.upper_bounds().iter().zip(&var).map(|(b, s)| b / s).collect();
        let (rows, cols) = nlp.jacobian_structure();
        let mut row_entries = vec![Vec::new(); con.len()];
        for (k, &r) in rows.iter().enumerate() {
            row_entries[r].push(k);
        }
        let mut bandwidth = 0;
        for entries in &row_entries {
            let lo = entries.iter().map(|&k| cols[k]).min();
            let hi = entries.iter().map(|&k| cols[k]).max();
            if let (Some(lo), Some(hi)) = (lo, hi) {
                bandwidth = bandwidth.max(hi - lo);
            }
        }
        let hess = nlp.hessian_structure().map(|(r, c)| (r.to_vec(), c.to_vec()));
        if let Some((r, c)) = &hess {
            for (&a, &b) in r.iter().zip(c) {
                bandwidth = bandwidth.max(a.abs_diff(b));
            }
        }
        Scaled {
            nlp,
            var,
            con,
            sigma,
            lower,
            upper,
            rows: rows.to_vec(),
            cols: cols.to_vec(),
            row_entries,
            hess,
            bandwidth,
        }
    }

    fn buffers(&self) -> Buffers {
        Buffers {
            z: vec![0.0; self.var.len()],
            grad: vec![0.0; self.var.len()],
            c: vec![0.0; self.con.len()],
            jac: vec![0.0; self.rows.len()],
            hess: vec![0.0; self.hess.as_ref().map_or(0, |h| h.0.len())],
            weights: vec![0.0; self.con.len()],
        }
    }

    fn unscale(&self, zs: &[f64], z: &mut [f64]) {
        for ((zi, v), s) in z.iter_mut().zip(zs).zip(&self.var) {
            *zi = v * s;
        }
    }

    /// Scaled constraint values into `buf.c`.
    fn constraints(&self, zs: &[f64], buf: &mut Buffers) {
        self.unscale(zs, &mut buf.z);
        self.nlp.constraints(&buf.z, &mut buf.c);
        for (c, s) in buf.c.iter_mut().zip(&self.con) {
            *c /= s;
        }
    }

    /// Writes the scaled `∇f + Jᵀ w` into `out`, where `w` are multipliers of
    /// the scaled constraint rows. `buf.z` must already hold the unscaled point.
    fn lagrangian_gradient(&self, w: &[f64], buf: &mut Buffers, out: &mut [f64]) {
        self.nlp.gradient(&buf.z, &mut buf.grad);
        self.nlp.jacobian_values(&buf.z, &mut buf.jac);
        for i in 0..out.len() {
            out[i] = self.sigma * buf.grad[i];
        }
        for ((&r, &c), &v) in self.rows.iter().zip(&self.cols).zip(&buf.jac) {
            out[c] += v / self.con[r] * w[r];
        }
        for (o, s) in out.iter_mut().zip(&self.var) {
            *o *= s;
        }
    }
}

/// The augmented Lagrangian for fixed `(λ, μ)` in scaled variables.
struct Merit<'s, 'a, P: Nlp + ?Sized> {
    problem: &'s Scaled<'a, P>,
    lambda: &'s [f64],
    mu: f64,
    buf: &'s mut Buffers,
    w: Vec<f64>,
}

impl<P: Nlp + ?Sized> newton::SmoothBox for Merit<'_, '_, P> {
    fn value_grad(&mut self, zs: &[f64], grad: &mut [f64]) -> f64 {
        let problem = self.problem;
        problem.constraints(zs, self.buf);
        let mut value = problem.sigma * problem.nlp.objective(&self.buf.z);
        for i in 0..self.w.len() {
            let c = self.buf.c[i];
            value += self.lambda[i] * c + 0.5 * self.mu * c * c;
            self.w[i] = self.lambda[i] + self.mu * c;
        }
        problem.lagrangian_gradient(&self.w, self.buf, grad);
        value
    }

    /// `S (σ∇²f + Σ wᵢ/sᵢ ∇²cᵢ) S + μ J̃ᵀJ̃` with `w = λ + μ c̃`.
    fn hessian(&mut self, zs: &[f64], h: &mut newton::Banded) {
        let problem = self.problem;
        let buf = &mut *self.buf;
        problem.constraints(zs, buf);
        for i in 0..buf.c.len() {
            buf.weights[i] = (self.lambda[i] + self.mu * buf.c[i]) / problem.con[i];
        }
        if let Some((rows, cols)) = &problem.hess {
            problem
                .nlp
                .hessian_values(&buf.z, problem.sigma, &buf.weights, &mut buf.hess);
            for ((&r, &c), &v) in rows.iter().zip(cols).zip(&buf.hess) {
                h.add(r, c, v * problem.var[r] * problem.var[c]);
            }
        }
        problem.nlp.jacobian_values(&buf.z, &mut buf.jac);
        for (i, entries) in problem.row_entries.iter().enumerate() {
            let inv = 1.0 / problem.con[i];
            for &p in entries {
                let a = problem.cols[p];
                let ja = buf.jac[p] * problem.var[a] * inv;
                for &q in entries {
                    let b = problem.cols[q];
                    if a >= b {
                        let jb = buf.jac[q] * problem.var[b] * inv;
                        h.add(a, b, self.mu * ja * jb);
                    }
                }
            }
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

const MULTIPLIER_CAP: f64 = 1e12;
const FEASIBILITY_DECREASE: f64 = 0.25;

pub fn solve<P: Nlp + ?Sized>(nlp: &P, z0: &[f64], opts: &SolverOptions) -> Result<SolveResult> {
    opts.validate()?;
    let n = nlp.num_variables();
    let m = nlp.num_constraints();
    if z0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: z0.len(),
        });
    }

    let mut z = z0.to_vec();
    let mut clipped = 0;
    for ((zi, lo), hi) in z.iter_mut().zip(nlp.lower_bounds()).zip(nlp.upper_bounds()) {
        let c = zi.clamp(*lo, *hi);
        if c != *zi {
            clipped += 1;
            *zi = c;
        }
    }
    if !nlp.objective(&z).is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    let mut c0 = vec![0.0; m];
    nlp.constraints(&z, &mut c0);
    if c0.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("constraints"));
    }
    let mut g0 = vec![0.0; n];
    nlp.gradient(&z, &mut g0);
    let var = nlp.variable_scaling();
    let gmax = g0.iter().zip(&var).fold(0.0f64, |a, (g, s)| a.max((g * s).abs()));
    if !gmax.is_finite() {
        return Err(Error::NonFinite("objective gradient"));
    }
    let sigma = if gmax > opts.max_scaled_gradient {
        opts.max_scaled_gradient / gmax
    } else {
        1.0
    };

    let problem = Scaled::new(nlp, sigma);
    let mut buf = problem.buffers();
    let mut zs: Vec<f64> = z.iter().zip(&problem.var).map(|(v, s)| v / s).collect();
    let mut lambda = vec![0.0; m];
    let mut mu = opts.penalty_init;
    let mut inner_tol = opts.tol_stat.max(1e-2);
    let mut prev_feas = f64::INFINITY;
    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut lagrangian_grad = vec![0.0; n];

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64)> = None;
    let mut status = SolveStatus::IterationLimit;
    let mut stat = f64::INFINITY;
    let mut feas = f64::INFINITY;

    for iter in 1..=opts.max_outer {
        let inner_opts = lbfgsb::BoxOptions {
            max_iter: opts.max_inner,
            tol: inner_tol,
            memory: opts.lbfgs_memory,
            armijo: opts.armijo,
        };
        let mut merit = Merit {
            problem: &problem,
            lambda: &lambda,
            mu,
            buf: &mut buf,
            w: vec![0.0; m],
        };
        let outcome = match (opts.inner, problem.hess.is_some()) {
            (InnerMethod::Newton, true) => newton::minimize(
                &mut merit,
                &mut zs,
                &problem.lower,
                &problem.upper,
                problem.bandwidth,
                &inner_opts,
            ),
            _ => {
                use newton::SmoothBox;
                let mut f = |x: &[f64], g: &mut [f64]| merit.value_grad(x, g);
                lbfgsb::minimize(&mut f, &mut zs, &problem.lower, &problem.upper, &inner_opts)
            }
        };
        inner_total += outcome.iterations;

        problem.constraints(&zs, &mut buf);
        feas = inf_norm(&buf.c);
        for i in 0..m {
            lambda[i] = (lambda[i] + mu * buf.c[i]).clamp(-MULTIPLIER_CAP, MULTIPLIER_CAP);
        }
        problem.lagrangian_gradient(&lambda, &mut buf, &mut lagrangian_grad);
        stat = lbfgsb::projected_gradient_norm(&zs, &lagrangian_grad, &problem.lower, &problem.upper);
        let objective = nlp.objective(&buf.z);
        history.push(OuterIteration {
            iter,
            objective,
            feas_norm: feas,
            stat_norm: stat,
            penalty: mu,
            inner_iters: outcome.iterations,
        });

        if best.as_ref().is_none_or(|b| feas < b.0) {
            best = Some((feas, zs.clone(), lambda.clone(), stat));
        }
        if feas <= opts.tol_feas && stat <= opts.tol_stat {
            status = SolveStatus::Converged;
            best = Some((feas, zs.clone(), lambda.clone(), stat));
            break;
        }
        if mu >= opts.penalty_max && feas > 10.0 * opts.tol_feas {
            status = SolveStatus::Infeasible;
            break;
        }
        if feas > opts.tol_feas && feas > FEASIBILITY_DECREASE * prev_feas {
            mu = (mu * opts.penalty_growth).min(opts.penalty_max);
        }
        prev_feas = feas;
        inner_tol = (inner_tol * 0.1).max(opts.tol_stat);
    }

    let (feas_best, zs_best, lambda_best, stat_best) = match status {
        SolveStatus::Converged => best.expect("set on convergence"),
        _ => best.unwrap_or((feas, zs.clone(), lambda.clone(), stat)),
    };
    let mut z_out = vec![0.0; n];
    problem.unscale(&zs_best, &mut z_out);
    let multipliers = lambda_best
        .iter()
        .zip(&problem.con)
        .map(|(l, s)| l / (sigma * s))
        .collect();
    Ok(SolveResult {
        status,
        objective: nlp.objective(&z_out),
        z: z_out,
        multipliers,
        feas_norm: feas_best,
        stat_norm: stat_best,
        outer_iters: history.len(),
        inner_iters: inner_total,
        objective_scale: sigma,
        clipped,
        history,
    })
}

/// First-order optimality measures at `(z, λ)`, evaluated on the same scaled
/// problem the solver works with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖P(z − ∇L) − z‖∞` on the scaled box.
    pub stationarity: f64,
    /// `‖c(z)‖∞` of the scaled constraint rows.
    pub feasibility: f64,
    /// Largest bound-multiplier × bound-gap product implied by `∇L`.
    pub complementarity: f64,
}

pub fn kkt_residuals<P: Nlp + ?Sized>(
    nlp: &P,
    z: &[f64],
    multipliers: &[f64],
    objective_scale: f64,
) -> Result<KktResiduals> {
    let (n, m) = (nlp.num_variables(), nlp.num_constraints());
    if z.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: z.len(),
        });
    }
    if multipliers.len() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: multipliers.len(),
        });
    }
    let problem = Scaled::new(nlp, objective_scale);
    let mut buf = problem.buffers();
    let zs: Vec<f64> = z.iter().zip(&problem.var).map(|(v, s)| v / s).collect();
    problem.constraints(&zs, &mut buf);
    let feasibility = inf_norm(&buf.c);
    let scaled_lambda: Vec<f64> = multipliers
        .iter()
        .zip(&problem.con)
        .map(|(l, s)| l * objective_scale * s)
        .collect();
    let mut grad = vec![0.0; n];
    problem.lagrangian_gradient(&scaled_lambda, &mut buf, &mut grad);
    let stationarity = lbfgsb::projected_gradient_norm(&zs, &grad, &problem.lower, &problem.upper);
    let mut complementarity = 0.0f64;
    for i in 0..n {
        let g = grad[i];
        let at_lower = (zs[i] - problem.lower[i]) * g.max(0.0);
        let at_upper = (problem.upper[i] - zs[i]) * (-g).max(0.0);
        complementarity = complementarity.max(at_lower.abs()).max(at_upper.abs());
    }
    Ok(KktResiduals {
        stationarity,
        feasibility,
        complementarity,
    })
}
