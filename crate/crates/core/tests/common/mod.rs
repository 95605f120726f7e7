#![allow(dead_code)]

pub mod checks;

use flightopt_core::transcription::{diag2, diag5, CftocProblem, ObjectiveMode};
use flightopt_core::{Control, State};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SEED: u64 = 0x5eed_f117;

pub fn rng(stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut r = ChaCha8Rng::seed_from_u64(SEED);
    r.set_stream(stream);
    r
}

/// Cube root of machine epsilon, the usual central-difference step.
const FD_STEP: f64 = 6.0554544523933395e-6;

/// Central-difference Jacobian, one row per output.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Vec<Vec<f64>> {
    let m = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; m];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = FD_STEP * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Worst row of `|analytic − fd|`, each row measured against its own largest
/// analytic entry. All-zero rows are measured in absolute terms.
pub fn row_relative_error(analytic: &[Vec<f64>], fd: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    let mut worst = 0.0f64;
    for (a, d) in analytic.iter().zip(fd) {
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = a.iter().zip(d).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let rel = if scale > 0.0 { err / scale } else { err };
        worst = worst.max(rel);
    }
    worst
}

pub fn random_state(r: &mut impl Rng) -> State {
    State {
        x: r.gen_range(-4000.0..500.0),
        y: r.gen_range(-1500.0..500.0),
        v: r.gen_range(100.0..305.0),
        m: r.gen_range(56_000.0..70_000.0),
        theta: r.gen_range(-4.0..4.0),
    }
}

pub fn random_control(r: &mut impl Rng) -> Control {
    Control {
        thrust: r.gen_range(0.0..2e5),
        turn_rate: r.gen_range(-5e-3..5e-3),
    }
}

/// A small problem with random boundary states; used for derivative checks.
pub fn random_problem(r: &mut impl Rng, steps: usize, mode: ObjectiveMode, slack: f64) -> CftocProblem {
    let initial = random_state(r);
    let mut target = random_state(r);
    target.m = (initial.m - 5000.0).max(55_000.0);
    CftocProblem {
        steps,
        dt: r.gen_range(60.0..600.0),
        initial,
        target,
        state_lower: [-1e4, -1e4, 100.0, 55_000.0, -10.0],
        state_upper: [1e4, 1e4, 305.0, 70_000.0, 10.0],
        control_lower: [0.0, -5e-3],
        control_upper: [2e5, 5e-3],
        q: diag5([r.gen_range(0.0..1e-2), r.gen_range(0.0..1e-2), 1e-4, 1e-6, 1e-1]),
        r: diag2([1e-10, 1e2]),
        mode,
        fuel_weight: 1.0,
        terminal_slack: slack,
    }
}

/// Random decision vector with every node in the sampling box.
pub fn random_z(r: &mut impl Rng, steps: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(7 * steps + 5);
    for k in 0..=steps {
        z.extend(random_state(r).to_array());
        if k < steps {
            z.extend(random_control(r).to_array());
        }
    }
    z
}

/// Dense symmetric matrix from a lower-triangle sparse pattern.
pub fn symmetric_dense(m: &flightopt_core::sparse::SparseMatrix) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; m.ncols]; m.nrows];
    for ((&i, &j), &v) in m.rows.iter().zip(&m.cols).zip(&m.values) {
        assert!(i >= j, "entry ({i}, {j}) above the diagonal");
        d[i][j] += v;
        if i != j {
            d[j][i] += v;
        }
    }
    d
}
