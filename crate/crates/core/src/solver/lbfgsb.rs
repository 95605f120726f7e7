//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Search directions come from the two-loop recursion restricted to the
//! variables that are free at the current iterate (not pinned at a bound by
//! the gradient); steps are projected back onto the box and accepted by an
//! Armijo backtracking test along the projected path.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
pub(crate) struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient infinity norm drops below this.
    pub tol: f64,
    pub memory: usize,
    pub armijo: f64,
}

#[derive(Clone, Copy, Debug)]
#[allow(dead_code)]
pub(crate) struct BoxOutcome {
    pub iterations: usize,
    pub pg_norm: f64,
    pub value: f64,
}

pub(crate) fn project(x: &mut [f64], lb: &[f64], ub: &[f64]) {
    for ((xi, l), u) in x.iter_mut().zip(lb).zip(ub) {
        *xi = xi.clamp(*l, *u);
    }
}

/// `‖P(x − g) − x‖∞`
pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..x.len() {
        let step = (x[i] - g[i]).clamp(lb[i], ub[i]) - x[i];
        norm = norm.max(step.abs());
    }
    norm
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

const MAX_BACKTRACKS: usize = 60;

/// Minimizes `f` over `lb <= x <= ub` starting from `x` (projected first).
/// `f` writes the gradient into its second argument and returns the value.
pub(crate) fn minimize<F>(f: &mut F, x: &mut [f64], lb: &[f64], ub: &[f64], opts: &BoxOptions) -> BoxOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    project(x, lb, ub);
    let mut g = vec![0.0; n];
    let mut value = f(x, &mut g);
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut free = vec![true; n];
    let mut d = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    let mut iterations = 0;
    let mut pg_norm = projected_gradient_norm(x, &g, lb, ub);
    while iterations < opts.max_iter && pg_norm > opts.tol {
        iterations += 1;
        for i in 0..n {
            free[i] = !((x[i] <= lb[i] && g[i] > 0.0) || (x[i] >= ub[i] && g[i] < 0.0));
        }

        // two-loop recursion on the free subspace
        for i in 0..n {
            d[i] = if free[i] { g[i] } else { 0.0 };
        }
        for (k, pair) in memory.iter().enumerate().rev() {
            alpha[k] = pair.rho * dot(&pair.s, &d);
            for i in 0..n {
                d[i] -= alpha[k] * pair.y[i];
            }
        }
        if let Some(last) = memory.back() {
            let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for (k, pair) in memory.iter().enumerate() {
            let beta = pair.rho * dot(&pair.y, &d);
            for i in 0..n {
                d[i] += (alpha[k] - beta) * pair.s[i];
            }
        }
        for i in 0..n {
            d[i] = if free[i] { -d[i] } else { 0.0 };
        }

        let slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let mut step = if memory.is_empty() {
            let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if dmax > 1.0 {
                1.0 / dmax
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = (x[i] + step * d[i]).clamp(lb[i], ub[i]);
            }
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if !(decrease < 0.0) {
                break;
            }
            let f_trial = f(&trial, &mut g_trial);
            if f_trial.is_finite() && f_trial <= value + opts.armijo * decrease {
                let mut pair = Pair {
                    s: vec![0.0; n],
                    y: vec![0.0; n],
                    rho: 0.0,
                };
                for i in 0..n {
                    pair.s[i] = trial[i] - x[i];
                    pair.y[i] = g_trial[i] - g[i];
                }
                let sy = dot(&pair.s, &pair.y);
                if sy > 1e-12 * dot(&pair.y, &pair.y).sqrt() * dot(&pair.s, &pair.s).sqrt() && sy > 0.0 {
                    pair.rho = 1.0 / sy;
                    if memory.len() == opts.memory {
                        memory.pop_front();
                    }
                    memory.push_back(pair);
                }
                x.copy_from_slice(&trial);
                g.copy_from_slice(&g_trial);
                value = f_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if memory.is_empty() {
                break;
            }
            memory.clear();
        }
        pg_norm = projected_gradient_norm(x, &g, lb, ub);
    }
    BoxOutcome {
        iterations,
        pg_norm,
        value,
    }
}
