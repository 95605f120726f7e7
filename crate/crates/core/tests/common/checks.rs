//! Finite-difference sweeps shared by the derivative tests and the
//! acceptance run. Each returns the worst row-relative error found.

use flightopt_core::dynamics::{continuous_dynamics, hessians, jacobians};
use flightopt_core::transcription::ObjectiveMode;
use flightopt_core::{AircraftParams, Control, NlpInstance, PlanePoint, PolynomialWindField, State};
use rand::Rng;

use super::*;

pub const POINTS: usize = 100;
pub const REL_TOL: f64 = 1e-6;

fn field_components(field: &PolynomialWindField, z: &[f64]) -> Vec<f64> {
    let (u, v) = field.eval(PlanePoint::new(z[0], z[1]));
    vec![u, v]
}

/// `(jacobian, hessian)` errors of the shipped wind field.
pub fn wind(points: usize) -> (f64, f64) {
    let field = PolynomialWindField::ord_sfo();
    let mut r = rng(1);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..points {
        let p = [r.gen_range(-4000.0..500.0), r.gen_range(-1500.0..500.0)];
        let jac = field.jacobian(PlanePoint::new(p[0], p[1]));
        let fd = fd_jacobian(|z| field_components(&field, z), &p);
        worst.0 = worst.0.max(row_relative_error(&jac.map(|row| row.to_vec()), &fd));

        let hess = field.hessian(PlanePoint::new(p[0], p[1]));
        for comp in 0..2 {
            let fd = fd_jacobian(|z| field.jacobian(PlanePoint::new(z[0], z[1]))[comp].to_vec(), &p);
            worst.1 = worst
                .1
                .max(row_relative_error(&hess[comp].map(|row| row.to_vec()), &fd));
        }
    }
    worst
}

fn node_field(z: &[f64], field: &PolynomialWindField, p: &AircraftParams) -> Vec<f64> {
    let s = State::from_slice(&z[..5]);
    let u = Control::from_slice(&z[5..]);
    continuous_dynamics(&s, &u, field.eval(s.position()), p)
        .unwrap()
        .to_array()
        .to_vec()
}

/// `(jacobian, hessian)` errors of the vector field under the shipped wind.
pub fn dynamics(points: usize) -> (f64, f64) {
    let field = PolynomialWindField::ord_sfo();
    let params = AircraftParams::default();
    let mut r = rng(2);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..points {
        let s = random_state(&mut r);
        let u = random_control(&mut r);
        let node: Vec<f64> = s.to_array().into_iter().chain(u.to_array()).collect();

        let jac = jacobians(&s, &u, &field, &params).unwrap();
        let analytic: Vec<Vec<f64>> = (0..5)
            .map(|i| jac.state[i].iter().chain(&jac.control[i]).copied().collect())
            .collect();
        let fd = fd_jacobian(|z| node_field(z, &field, &params), &node);
        worst.0 = worst.0.max(row_relative_error(&analytic, &fd));

        let hess = hessians(&s, &u, &field, &params).unwrap();
        for comp in 0..5 {
            let fd = fd_jacobian(
                |z| {
                    let j = jacobians(
                        &State::from_slice(&z[..5]),
                        &Control::from_slice(&z[5..]),
                        &field,
                        &params,
                    )
                    .unwrap();
                    j.state[comp].iter().chain(&j.control[comp]).copied().collect()
                },
                &node,
            );
            let analytic: Vec<Vec<f64>> = hess[comp].iter().map(|row| row.to_vec()).collect();
            worst.1 = worst.1.max(row_relative_error(&analytic, &fd));
        }
    }
    worst
}

/// `[objective gradient, constraint jacobian, lagrangian hessian]` errors on
/// small random instances, alternating modes and terminal handling.
pub fn transcription(points: usize) -> [f64; 3] {
    let mut r = rng(3);
    let mut worst = [0.0f64; 3];
    for i in 0..points {
        let mode = if i % 2 == 0 {
            ObjectiveMode::Time
        } else {
            ObjectiveMode::Fuel
        };
        let slack = if i % 3 == 0 { 5.0 } else { 0.0 };
        let problem = random_problem(&mut r, 4, mode, slack);
        let inst = NlpInstance::build(problem, PolynomialWindField::ord_sfo(), AircraftParams::default()).unwrap();
        let z = random_z(&mut r, inst.problem().steps);

        let grad = inst.objective_gradient(&z).unwrap();
        let fd = fd_jacobian(|z| vec![inst.objective(z).unwrap()], &z);
        worst[0] = worst[0].max(row_relative_error(&[grad], &fd));

        let jac = inst.constraint_jacobian(&z).unwrap().to_dense();
        let fd = fd_jacobian(|z| inst.constraints(z).unwrap(), &z);
        worst[1] = worst[1].max(row_relative_error(&jac, &fd));

        let lambda: Vec<f64> = (0..jac.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let obj_factor = r.gen_range(0.1..2.0);
        let hess = symmetric_dense(&inst.lagrangian_hessian(&z, obj_factor, &lambda).unwrap());
        let lagrangian_gradient = |z: &[f64]| {
            let mut g = inst.objective_gradient(z).unwrap();
            g.iter_mut().for_each(|v| *v *= obj_factor);
            let mut jt = vec![0.0; z.len()];
            inst.constraint_jacobian(z).unwrap().tr_mul_vec(&lambda, &mut jt);
            g.iter().zip(&jt).map(|(a, b)| a + b).collect::<Vec<_>>()
        };
        let fd = fd_jacobian(lagrangian_gradient, &z);
        worst[2] = worst[2].max(row_relative_error(&hess, &fd));
    }
    worst
}
