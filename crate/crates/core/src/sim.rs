//! Replay, trajectory metrics and recorded-track handling.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, AircraftParams, State, Stepper, STATE_DIM};
use crate::error::{Error, Result};
use crate::geo::{GeoPoint, PlanePoint, Projection};
use crate::transcription::{NlpInstance, STATE_SCALE};

/// One fix of a recorded flight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    /// Seconds since departure.
    pub t: f64,
    pub pos: GeoPoint,
    /// Feet; carried through but not used.
    pub alt: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub travel_time_h: f64,
    /// `m₀ − m_N`, kg.
    pub fuel_burned_kg: f64,
    pub path_length_km: f64,
    pub max_cross_track_km: Option<f64>,
    pub mean_cross_track_km: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    /// States obtained by integrating the optimized controls from the initial
    /// state of the problem.
    pub trajectory: Vec<State>,
    /// Largest `|replayed − optimized|` per state component over all nodes.
    pub max_gap: [f64; STATE_DIM],
    /// Same gaps divided by the solver's state scales, then maximized.
    pub scaled_gap: f64,
}

impl Replay {
    /// Largest Euclidean distance between replayed and optimized positions, km.
    pub fn max_position_gap_km(&self, inst: &NlpInstance, z: &[f64]) -> f64 {
        let states = inst.layout().states(z);
        self.trajectory
            .iter()
            .zip(&states)
            .map(|(a, b)| a.position().distance(&b.position()))
            .fold(0.0, f64::max)
    }
}

/// Re-integrates the controls stored in `z` with `stepper` and compares the
/// result against the states stored in `z`. With [`Stepper::Euler`] the gap of
/// a converged solve is bounded by the accumulated defect residuals.
pub fn replay(inst: &NlpInstance, z: &[f64], stepper: Stepper) -> Result<Replay> {
    if z.len() != inst.dimension() {
        return Err(Error::Dimension {
            expected: inst.dimension(),
            actual: z.len(),
        });
    }
    let layout = inst.layout();
    let problem = inst.problem();
    let states = layout.states(z);
    let controls = layout.controls(z);
    let trajectory = simulate(
        &problem.initial,
        &controls,
        inst.field(),
        problem.dt,
        inst.params(),
        stepper,
    )?;
    let mut max_gap = [0.0f64; STATE_DIM];
    for (a, b) in trajectory.iter().zip(&states) {
        let (a, b) = (a.to_array(), b.to_array());
        for j in 0..STATE_DIM {
            max_gap[j] = max_gap[j].max((a[j] - b[j]).abs());
        }
    }
    let scaled_gap = (0..STATE_DIM).map(|j| max_gap[j] / STATE_SCALE[j]).fold(0.0, f64::max);
    Ok(Replay {
        trajectory,
        max_gap,
        scaled_gap,
    })
}

/// Euclidean distance from `p` to the segment `a`–`b`.
pub fn segment_distance(p: PlanePoint, a: PlanePoint, b: PlanePoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&PlanePoint::new(a.x + t * dx, a.y + t * dy))
}

/// Distance from `p` to the nearest point of `polyline`.
pub fn polyline_distance(p: PlanePoint, polyline: &[PlanePoint]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [only] => p.distance(only),
        _ => polyline
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn path_length(points: &[PlanePoint]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Summary numbers for a state sequence sampled every `dt` seconds. The
/// reference, when given, must already be projected with the same origin.
pub fn metrics(traj: &[State], reference: Option<&[PlanePoint]>, dt: f64) -> Result<TrajectoryMetrics> {
    if traj.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "trajectory needs at least 2 states, got {}",
            traj.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let points: Vec<PlanePoint> = traj.iter().map(State::position).collect();
    let (max_ct, mean_ct) = match reference {
        None => (None, None),
        Some(r) if r.len() < 2 => {
            return Err(Error::InvalidInput(format!(
                "reference track needs at least 2 points, got {}",
                r.len()
            )))
        }
        Some(r) => {
            let d: Vec<f64> = points.iter().map(|p| polyline_distance(*p, r)).collect();
            let max = d.iter().copied().fold(0.0, f64::max);
            (Some(max), Some(d.iter().sum::<f64>() / d.len() as f64))
        }
    };
    let n = traj.len() - 1;
    Ok(TrajectoryMetrics {
        travel_time_h: n as f64 * dt / 3600.0,
        fuel_burned_kg: traj[0].m - traj[n].m,
        path_length_km: path_length(&points),
        max_cross_track_km: max_ct,
        mean_cross_track_km: mean_ct,
    })
}

/// Fuel an Euler mass chain burns under `thrusts`: `η Σ T_k dT`.
pub fn euler_fuel(thrusts: &[f64], dt: f64, params: &AircraftParams) -> f64 {
    thrusts.iter().map(|t| params.tsfc * t * dt).sum()
}

/// Projects a recorded track with `proj`.
pub fn project_track(track: &[TrackPoint], proj: &Projection) -> Result<Vec<PlanePoint>> {
    track.iter().map(|p| proj.project(p.pos)).collect()
}

#[derive(Deserialize)]
struct TrackRow {
    acid: String,
    t: f64,
    lon: f64,
    lat: f64,
    alt: Option<f64>,
}

/// Reads a track CSV (`acid,t,lon,lat,alt`) grouped by flight id and sorted
/// by time within each flight.
pub fn load_tracks(path: &Path) -> Result<BTreeMap<String, Vec<TrackPoint>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tracks(file, path)
}

pub fn read_tracks<R: Read>(reader: R, source: &Path) -> Result<BTreeMap<String, Vec<TrackPoint>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?
        .clone();
    for col in ["acid", "t", "lon", "lat", "alt"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::parse(source, 1, format!("missing column `{col}`")));
        }
    }
    let mut tracks: BTreeMap<String, Vec<TrackPoint>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TrackRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(source, line, e.to_string()))?;
        if row.acid.is_empty() {
            return Err(Error::parse(source, line, "empty acid"));
        }
        if !row.t.is_finite() {
            return Err(Error::parse(source, line, format!("bad time {}", row.t)));
        }
        let pos = GeoPoint::new(row.lon, row.lat).map_err(|e| Error::parse(source, line, e.to_string()))?;
        tracks.entry(row.acid).or_default().push(TrackPoint {
            t: row.t,
            pos,
            alt: row.alt,
        });
    }
    if tracks.is_empty() {
        return Err(Error::parse(source, 1, "no track rows"));
    }
    for track in tracks.values_mut() {
        track.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    Ok(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Control;
    use crate::transcription::{diag2, diag5, CftocProblem, ObjectiveMode, DEFAULT_CONTROL_WEIGHTS};
    use crate::wind::PolynomialWindField;
    use proptest::prelude::*;

    fn state(x: f64, y: f64, m: f64) -> State {
        State {
            x,
            y,
            v: 200.0,
            m,
            theta: 0.0,
        }
    }

    #[test]
    fn straight_segment_metrics() {
        let traj = [state(0.0, 0.0, 70_000.0), state(100.0, 0.0, 69_000.0)];
        let m = metrics(&traj, None, 1800.0).unwrap();
        assert_eq!(m.path_length_km, 100.0);
        assert_eq!(m.fuel_burned_kg, 1000.0);
        assert_eq!(m.travel_time_h, 0.5);
        assert_eq!(m.max_cross_track_km, None);

        let reference = [PlanePoint::new(0.0, 0.0), PlanePoint::new(100.0, 0.0)];
        let m = metrics(&traj, Some(&reference), 1800.0).unwrap();
        assert_eq!(m.max_cross_track_km, Some(0.0));
        assert_eq!(m.mean_cross_track_km, Some(0.0));

        assert!(metrics(&traj[..1], None, 1.0).is_err());
        assert!(metrics(&traj, Some(&reference[..1]), 1.0).is_err());
    }

    #[test]
    fn cross_track_to_offset_reference() {
        let traj = [state(0.0, 3.0, 1.0), state(50.0, 3.0, 1.0), state(100.0, -1.0, 1.0)];
        let reference = [PlanePoint::new(0.0, 0.0), PlanePoint::new(100.0, 0.0)];
        let m = metrics(&traj, Some(&reference), 60.0).unwrap();
        assert_eq!(m.max_cross_track_km, Some(3.0));
        assert!((m.mean_cross_track_km.unwrap() - 7.0 / 3.0).abs() < 1e-12);
        // beyond the end of the segment the nearest point is the endpoint
        assert_eq!(
            segment_distance(PlanePoint::new(103.0, 4.0), reference[0], reference[1]),
            5.0
        );
    }

    fn problem(steps: usize) -> CftocProblem {
        let initial = State {
            x: 0.0,
            y: 0.0,
            v: 230.0,
            m: 70_000.0,
            theta: 0.0,
        };
        CftocProblem {
            steps,
            dt: 60.0,
            initial,
            target: State { x: 100.0, ..initial },
            state_lower: [-1e4, -1e4, 100.0, 55_000.0, -10.0],
            state_upper: [1e4, 1e4, 300.0, 70_000.0, 10.0],
            control_lower: [0.0, -5e-3],
            control_upper: [2e5, 5e-3],
            q: diag5([1e-2, 1e-2, 0.0, 0.0, 0.0]),
            r: diag2(DEFAULT_CONTROL_WEIGHTS),
            mode: ObjectiveMode::Time,
            fuel_weight: 1.0,
            terminal_slack: 0.0,
        }
    }

    #[test]
    fn replay_of_a_simulated_trajectory_is_exact_and_sensitive() {
        let p = problem(8);
        let inst = NlpInstance::build(p.clone(), PolynomialWindField::ord_sfo(), AircraftParams::default()).unwrap();
        let controls: Vec<Control> = (0..8)
            .map(|k| Control {
                thrust: 40_000.0 + 500.0 * k as f64,
                turn_rate: 2e-4,
            })
            .collect();
        let traj = simulate(&p.initial, &controls, inst.field(), p.dt, inst.params(), Stepper::Euler).unwrap();
        let z = inst.layout().pack(&traj, &controls).unwrap();
        let exact = replay(&inst, &z, Stepper::Euler).unwrap();
        assert!(exact.scaled_gap < 1e-9);
        assert!(exact.max_position_gap_km(&inst, &z) < 1e-9);

        let mut bumped = z.clone();
        bumped[inst.layout().control(3, 0)] *= 1.1;
        let perturbed = replay(&inst, &bumped, Stepper::Euler).unwrap();
        assert!(perturbed.scaled_gap > exact.scaled_gap);
        assert!(replay(&inst, &z[1..], Stepper::Euler).is_err());
    }

    #[test]
    fn constant_thrust_fuel_closed_form() {
        let p = AircraftParams::default();
        let u = Control {
            thrust: 45_000.0,
            turn_rate: 0.0,
        };
        let (n, dt) = (12, 300.0);
        let traj = simulate(
            &state(0.0, 0.0, 70_000.0),
            &vec![u; n],
            &PolynomialWindField::zero(Default::default()),
            dt,
            &p,
            Stepper::Euler,
        )
        .unwrap();
        let m = metrics(&traj, None, dt).unwrap();
        let expect = p.tsfc * u.thrust * n as f64 * dt;
        assert!((m.fuel_burned_kg - expect).abs() < 1e-9 * expect);
        assert!((euler_fuel(&vec![u.thrust; n], dt, &p) - expect).abs() < 1e-9 * expect);
    }

    const CSV: &str = "acid,t,lon,lat,alt\n\
        UAL1,120,-88.5,41.9,35000\n\
        AAL2,0,-87.9,41.9,\n\
        UAL1,0,-87.9,41.97,\n\
        AAL2,60,-88.1,41.8,31000\n\
        UAL1,60,-88.2,41.95,30000\n";

    #[test]
    fn tracks_are_grouped_and_sorted() {
        let tracks = read_tracks(CSV.as_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(tracks.len(), 2);
        let ual = &tracks["UAL1"];
        assert_eq!(ual.iter().map(|p| p.t).collect::<Vec<_>>(), vec![0.0, 60.0, 120.0]);
        assert_eq!(ual[0].alt, None);
        assert_eq!(ual[2].alt, Some(35000.0));
        assert_eq!(tracks["AAL2"].len(), 2);
    }

    #[test]
    fn interleaved_flights_partition_by_independent_count() {
        let tracks = read_tracks(CSV.as_bytes(), Path::new("t.csv")).unwrap();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for line in CSV.lines().skip(1) {
            *counts.entry(line.split(',').next().unwrap()).or_default() += 1;
        }
        for (acid, n) in counts {
            assert_eq!(tracks[acid].len(), n);
        }
    }

    #[test]
    fn malformed_tracks_report_lines() {
        let bad = "acid,t,lon,lat,alt\nX,0,-87,41,\nX,zero,-87,41,\n";
        let err = read_tracks(bad.as_bytes(), Path::new("b.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let polar = "acid,t,lon,lat,alt\nX,0,-87,89,\n";
        assert!(matches!(
            read_tracks(polar.as_bytes(), Path::new("p.csv")),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(read_tracks("acid,t,lon,lat,alt\n".as_bytes(), Path::new("e.csv")).is_err());
        assert!(read_tracks("acid,t,lon,lat\nX,0,1,2\n".as_bytes(), Path::new("h.csv")).is_err());
        assert!(load_tracks(Path::new("/nonexistent/tracks.csv")).is_err());
    }

    fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-500.0..500.0f64, -500.0..500.0f64), 2..12)
    }

    proptest! {
        #[test]
        fn cross_track_is_symmetric_under_reversal(traj in points(), reference in points()) {
            let states: Vec<State> = traj.iter().map(|&(x, y)| state(x, y, 1.0)).collect();
            let mut r: Vec<PlanePoint> = reference.iter().map(|&(x, y)| PlanePoint::new(x, y)).collect();
            let a = metrics(&states, Some(&r), 60.0).unwrap();
            r.reverse();
            let b = metrics(&states, Some(&r), 60.0).unwrap();
            prop_assert!((a.max_cross_track_km.unwrap() - b.max_cross_track_km.unwrap()).abs() < 1e-9);
            prop_assert!((a.mean_cross_track_km.unwrap() - b.mean_cross_track_km.unwrap()).abs() < 1e-9);
        }

        #[test]
        fn path_is_never_shorter_than_the_chord(traj in points()) {
            let states: Vec<State> = traj.iter().map(|&(x, y)| state(x, y, 1.0)).collect();
            let m = metrics(&states, None, 60.0).unwrap();
            let chord = states[0].position().distance(&states.last().unwrap().position());
            prop_assert!(m.path_length_km >= chord - 1e-9);
            prop_assert!(m.path_length_km >= 0.0);
        }
    }
}
