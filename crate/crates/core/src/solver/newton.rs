//! Box-constrained projected Newton method on a banded Hessian.
//!
//! Variables that sit within `ε` of a bound with the gradient pushing
//! outward are held on a steepest-descent step; the rest take a Newton step
//! from a banded Cholesky factorization, shifted by a multiple of the identity
//! whenever the reduced Hessian is not positive definite. Trial points are
//! projected onto the box and accepted by an Armijo test along the projected
//! arc.

use super::lbfgsb::{project, projected_gradient_norm, BoxOptions, BoxOutcome};

/// Symmetric matrix with `bandwidth` sub-diagonals, lower half stored by rows.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Banded {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.at(i, j)]
        }
    }

    /// Adds to the `(i, j)` entry; `i`, `j` in either order.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.at(i, j);
        self.data[k] += v;
    }

    /// Replaces row and column `i` by the unit vector.
    fn pin(&mut self, i: usize) {
        for j in i.saturating_sub(self.bw)..i {
            let k = self.at(i, j);
            self.data[k] = 0.0;
        }
        for r in i + 1..(i + self.bw + 1).min(self.n) {
            let k = self.at(r, i);
            self.data[k] = 0.0;
        }
        let k = self.at(i, i);
        self.data[k] = 1.0;
    }

    fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.data[self.at(i, i)].abs()).fold(0.0, f64::max)
    }

    /// Cholesky factor of `self + shift·I`, or `None` if a pivot is not
    /// positive.
    fn cholesky(&self, shift: f64) -> Option<Banded> {
        let mut l = Banded::zeros(self.n, self.bw);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut sum = self.data[self.at(i, j)];
                if i == j {
                    sum += shift;
                }
                for k in lo.max(j.saturating_sub(self.bw))..j {
                    sum -= l.data[l.at(i, k)] * l.data[l.at(j, k)];
                }
                let k = l.at(i, j);
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l.data[k] = sum.sqrt();
                } else {
                    l.data[k] = sum / l.data[l.at(j, j)];
                }
            }
        }
        Some(l)
    }

    /// Solves `L Lᵀ x = b` in place, `self` being the factor.
    fn solve_factored(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut sum = b[i];
            for k in i.saturating_sub(self.bw)..i {
                sum -= self.data[self.at(i, k)] * b[k];
            }
            b[i] = sum / self.data[self.at(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut sum = b[i];
            for r in i + 1..(i + self.bw + 1).min(self.n) {
                sum -= self.data[self.at(r, i)] * b[r];
            }
            b[i] = sum / self.data[self.at(i, i)];
        }
    }
}

/// A twice-differentiable function on a box.
pub(crate) trait SmoothBox {
    fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64;
    fn hessian(&mut self, x: &[f64], h: &mut Banded);
}

const ACTIVE_EPS: f64 = 1e-3;
const MAX_BACKTRACKS: usize = 50;
const MAX_SHIFTS: usize = 60;

pub(crate) fn minimize<F: SmoothBox>(
    f: &mut F,
    x: &mut [f64],
    lb: &[f64],
    ub: &[f64],
    bw: usize,
    opts: &BoxOptions,
) -> BoxOutcome {
    let n = x.len();
    project(x, lb, ub);
    let mut g = vec![0.0; n];
    let mut value = f.value_grad(x, &mut g);
    let mut h = Banded::zeros(n, bw);
    let mut active = vec![false; n];
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut shift = 0.0f64;

    let mut iterations = 0;
    let mut pg_norm = projected_gradient_norm(x, &g, lb, ub);
    while iterations < opts.max_iter && pg_norm > opts.tol {
        iterations += 1;
        let eps = pg_norm.min(ACTIVE_EPS);
        for i in 0..n {
            active[i] = (x[i] <= lb[i] + eps && g[i] > 0.0) || (x[i] >= ub[i] - eps && g[i] < 0.0);
        }
        h.clear();
        f.hessian(x, &mut h);
        for i in 0..n {
            if active[i] {
                h.pin(i);
            }
        }
        let floor = 1e-10 * h.max_diagonal().max(1.0);
        let mut factor = None;
        shift = if shift > 0.0 { (shift / 10.0).max(floor) } else { 0.0 };
        for _ in 0..MAX_SHIFTS {
            if let Some(l) = h.cholesky(shift) {
                factor = Some(l);
                break;
            }
            shift = (4.0 * shift).max(floor);
        }
        for i in 0..n {
            d[i] = -g[i];
        }
        if let Some(l) = &factor {
            l.solve_factored(&mut d);
        }

        let mut accepted = false;
        let mut new_value = value;
        for attempt in 0..2 {
            if attempt == 1 {
                // Newton direction failed; fall back to projected steepest descent
                let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                for i in 0..n {
                    d[i] = -g[i] / gmax.max(1.0);
                }
            }
            let mut step = 1.0;
            for _ in 0..MAX_BACKTRACKS {
                for i in 0..n {
                    trial[i] = (x[i] + step * d[i]).clamp(lb[i], ub[i]);
                }
                let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
                if decrease < 0.0 {
                    let f_trial = f.value_grad(&trial, &mut g_trial);
                    if f_trial.is_finite() && f_trial <= value + opts.armijo * decrease {
                        accepted = true;
                        new_value = f_trial;
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
        x.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_trial);
        value = new_value;
        pg_norm = projected_gradient_norm(x, &g, lb, ub);
    }
    BoxOutcome {
        iterations,
        pg_norm,
        value,
    }
}
