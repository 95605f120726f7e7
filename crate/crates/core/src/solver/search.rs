//! Minimum feasible horizon over a grid of flight times.
//!
//! Feasibility is assumed monotone in the horizon: if the aircraft can reach
//! the destination in `T` it can also do so in any longer grid time. The
//! search probes the longest time first, then the shortest, and bisects the
//! bracket in between. With `jobs > 1` each round probes `jobs` evenly spaced
//! interior points in parallel, shrinking the bracket by a factor of
//! `jobs + 1` per round. Every probe starts from the same straight-line guess,
//! so the outcome does not depend on `jobs` or thread scheduling.

use serde::Serialize;

use crate::dynamics::AircraftParams;
use crate::error::{Error, Result};
use crate::transcription::{CftocProblem, NlpInstance};
use crate::wind::PolynomialWindField;

use super::{solve, SolveResult, SolveStatus, SolverOptions};

/// Builds the instance for `problem`, starts from its straight-line guess and
/// solves.
pub fn solve_fixed(
    problem: CftocProblem,
    field: &PolynomialWindField,
    params: &AircraftParams,
    opts: &SolverOptions,
) -> Result<(NlpInstance, SolveResult)> {
    let inst = NlpInstance::build(problem, field.clone(), *params)?;
    let guess = inst.initial_guess();
    let mut result = solve(&inst, &guess.z, opts)?;
    result.clipped = guess.clipped;
    Ok((inst, result))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HorizonProbe {
    pub hours: f64,
    pub status: SolveStatus,
    pub feas_norm: f64,
    pub outer_iters: usize,
}

#[derive(Clone, Debug)]
pub struct MinTimeResult {
    pub hours: f64,
    pub instance: NlpInstance,
    pub result: SolveResult,
    /// Every solve performed, in probe order.
    pub probes: Vec<HorizonProbe>,
    /// The next shorter grid time, known to be infeasible. `None` when the
    /// shortest grid time already converges.
    pub infeasible_below: Option<f64>,
}

fn grid(range: (f64, f64), step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidInput(format!("bad horizon range [{lo}, {hi}]")));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "horizon step must be positive, got {step}"
        )));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    // round to kill the accumulated binary noise in lo + i·step
    Ok((0..count)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

type Probe = Result<(NlpInstance, SolveResult)>;

fn run_probes(
    template: &CftocProblem,
    field: &PolynomialWindField,
    params: &AircraftParams,
    opts: &SolverOptions,
    hours: &[f64],
) -> Vec<Probe> {
    let one = |h: f64| solve_fixed(template.with_total_hours(h), field, params, opts);
    if hours.len() <= 1 {
        return hours.iter().map(|&h| one(h)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = hours.iter().map(|&h| scope.spawn(move || one(h))).collect();
        handles
            .into_iter()
            .map(|handle| handle.join().unwrap_or_else(|panic| std::panic::resume_unwind(panic)))
            .collect()
    })
}

/// Shortest grid horizon in `range` (hours, inclusive, spacing `step`) for
/// which the solver converges. `template.dt` is ignored; the step count is
/// kept and `dt` stretched to each probed horizon.
pub fn solve_min_time(
    template: &CftocProblem,
    field: &PolynomialWindField,
    params: &AircraftParams,
    range: (f64, f64),
    step: f64,
    opts: &SolverOptions,
    jobs: usize,
) -> Result<MinTimeResult> {
    let hours = grid(range, step)?;
    let jobs = jobs.max(1);
    let mut probes = Vec::new();
    let record = |h: f64, r: &SolveResult, probes: &mut Vec<HorizonProbe>| {
        probes.push(HorizonProbe {
            hours: h,
            status: r.status,
            feas_norm: r.feas_norm,
            outer_iters: r.outer_iters,
        })
    };

    let top = hours.len() - 1;
    let (inst, result) = run_probes(template, field, params, opts, &hours[top..]).remove(0)?;
    record(hours[top], &result, &mut probes);
    if !result.converged() {
        return Err(Error::NoFeasibleHorizon {
            low_hours: hours[0],
            high_hours: hours[top],
            detail: format!(
                "longest horizon ended {} with feasibility {:e}",
                result.status, result.feas_norm
            ),
        });
    }
    let mut best = (top, inst, result);
    if top == 0 {
        return Ok(MinTimeResult {
            hours: hours[0],
            instance: best.1,
            result: best.2,
            probes,
            infeasible_below: None,
        });
    }

    let (inst, result) = run_probes(template, field, params, opts, &hours[..1]).remove(0)?;
    record(hours[0], &result, &mut probes);
    if result.converged() {
        return Ok(MinTimeResult {
            hours: hours[0],
            instance: inst,
            result,
            probes,
            infeasible_below: None,
        });
    }

    // invariant: hours[lo] fails, hours[hi] converges
    let (mut lo, mut hi) = (0usize, top);
    while hi - lo > 1 {
        let gap = hi - lo;
        let k = jobs.min(gap - 1);
        let mut picks: Vec<usize> = (1..=k).map(|i| lo + (i * gap) / (k + 1)).collect();
        picks.dedup();
        let probe_hours: Vec<f64> = picks.iter().map(|&i| hours[i]).collect();
        let outcomes = run_probes(template, field, params, opts, &probe_hours);
        let mut new_lo = lo;
        let mut new_hi = hi;
        for (&i, outcome) in picks.iter().zip(outcomes) {
            let (inst, result) = outcome?;
            record(hours[i], &result, &mut probes);
            if result.converged() {
                if i < new_hi {
                    new_hi = i;
                    best = (i, inst, result);
                }
            } else if i > new_lo && i < new_hi {
                new_lo = i;
            }
        }
        // a failure above a success breaks monotonicity; trust the success
        new_lo = new_lo.min(new_hi - 1);
        lo = new_lo;
        hi = new_hi;
    }
    debug_assert_eq!(best.0, hi);
    Ok(MinTimeResult {
        hours: hours[hi],
        instance: best.1,
        result: best.2,
        probes,
        infeasible_below: Some(hours[lo]),
    })
}
