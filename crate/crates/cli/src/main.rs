//! `flightopt`: wind fitting, trajectory optimization, replay and comparison.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 no converged
//! solution (infeasible horizon or iteration limit), 3 internal error.

mod bundle;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use flightopt_core::export::write_json;
use flightopt_core::scenario::{Horizon, WindSpec};
use flightopt_core::solver::{solve_fixed, solve_min_time};
use flightopt_core::wind;
use flightopt_core::{Error, GeoPoint, Scenario, Stepper, WindBasis};

use bundle::{Bundle, Search};

#[derive(Parser)]
#[command(
    name = "flightopt",
    version,
    about = "Point-mass flight trajectory optimization in a polynomial wind field"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit polynomial wind surfaces to gridded samples.
    FitWind(FitWindArgs),
    /// Solve a scenario and write a result bundle.
    Optimize(OptimizeArgs),
    /// Compare a result bundle against a recorded track.
    Compare(CompareArgs),
    /// Re-integrate the controls of a result bundle.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct FitWindArgs {
    /// Wind samples with header `lon,lat,u,v,slot`.
    samples: PathBuf,
    /// Projection origin as `lon,lat`. Taken from --scenario when omitted.
    #[arg(long, value_parser = parse_origin, allow_hyphen_values = true)]
    origin: Option<GeoPoint>,
    /// Scenario whose origin defines the projection.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Fit a full bivariate basis of this total degree instead of the
    /// corridor basis.
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long, env = "FLIGHTOPT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `output`, then `./out`.
    #[arg(long, env = "FLIGHTOPT_OUT")]
    out: Option<PathBuf>,
    /// Parallel solves per round of the horizon search.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write the tab-separated solver log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory written by `optimize`.
    #[arg(long)]
    bundle: PathBuf,
    /// Track CSV with header `acid,t,lon,lat,alt`.
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    acid: String,
    /// Directory for `compare.json`; defaults to the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepperArg {
    Euler,
    Rk4,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value = "euler")]
    stepper: StepperArg,
    /// Directory for the replayed trajectory; defaults to the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_origin(s: &str) -> Result<GeoPoint, String> {
    let (lon, lat) = s.split_once(',').ok_or("expected `lon,lat`")?;
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude: {e}"))?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude: {e}"))?;
    GeoPoint::new(lon, lat).map_err(|e| e.to_string())
}

enum Failure {
    Config(anyhow::Error),
    NotConverged(String),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::NotConverged(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

/// Errors in inputs are configuration errors; the rest are internal.
fn classify(e: Error) -> Failure {
    match e {
        Error::NoFeasibleHorizon { .. } => Failure::NotConverged(e.to_string()),
        Error::Dimension { .. } => Failure::Internal(e.into()),
        other => Failure::Config(other.into()),
    }
}

fn config<T>(r: flightopt_core::Result<T>, what: &str) -> Result<T, Failure> {
    r.map_err(|e| match classify(e) {
        Failure::Config(e) => Failure::Config(e.context(what.to_string())),
        other => other,
    })
}

fn internal<T>(r: flightopt_core::Result<T>, what: &str) -> Result<T, Failure> {
    r.map_err(|e| Failure::Internal(anyhow::Error::new(e).context(what.to_string())))
}

fn out_dir(explicit: Option<PathBuf>, fallback: Option<&Path>) -> Result<PathBuf, Failure> {
    let dir = explicit
        .or_else(|| fallback.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Internal)?;
    Ok(dir)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn fit_wind(args: FitWindArgs) -> Result<(), Failure> {
    let origin = match (args.origin, &args.scenario) {
        (Some(o), _) => o,
        (None, Some(path)) => config(Scenario::load(path), "loading scenario")?.origin,
        (None, None) => return Err(Failure::Config(anyhow!("give --origin or --scenario"))),
    };
    let basis = match args.degree {
        Some(degree) => WindBasis::Full { degree },
        None => WindBasis::Quartic,
    };
    config(basis.validate(), "basis")?;
    let proj = config(flightopt_core::Projection::new(origin), "origin")?;
    let samples = config(wind::ingest_csv(&args.samples, &proj), "reading wind samples")?;
    let averaged = config(wind::average_slots(&samples), "averaging time slots")?;
    let (field, report) = config(wind::fit(&averaged, basis), "fitting")?;

    let dir = out_dir(args.out, None)?;
    let spec = WindSpec::Coefficients {
        basis: field.basis,
        a: field.a.clone(),
        b: field.b.clone(),
    };
    internal(write_json(&dir.join("wind_field.json"), &spec), "writing wind field")?;
    internal(write_json(&dir.join("fit_report.json"), &report), "writing fit report")?;
    println!(
        "fitted {} samples ({} after averaging): rss u {:.4e}, rss v {:.4e}, condition {:.3e}",
        samples.len(),
        averaged.len(),
        report.rss_u,
        report.rss_v,
        report.condition
    );
    println!("wrote {}", dir.join("wind_field.json").display());
    Ok(())
}

fn optimize(args: OptimizeArgs) -> Result<(), Failure> {
    if args.jobs == 0 {
        return Err(Failure::Config(anyhow!("--jobs must be at least 1")));
    }
    let scenario = config(Scenario::load(&args.scenario), "loading scenario")?;
    let (field, fit) = config(scenario.wind_field(&base_dir(&args.scenario)), "building wind field")?;
    let dir = out_dir(args.out, scenario.output.as_deref())?;

    let (hours, inst, result, search) = match scenario.horizon {
        Horizon::Fixed { hours, .. } => {
            let problem = config(scenario.problem(hours), "building problem")?;
            let (inst, result) = internal(
                solve_fixed(problem, &field, &scenario.aircraft, &scenario.solver),
                "solving",
            )?;
            (hours, inst, result, None)
        }
        Horizon::Search {
            min_hours,
            max_hours,
            step_hours,
            ..
        } => {
            let template = config(scenario.problem(max_hours), "building problem")?;
            let found = solve_min_time(
                &template,
                &field,
                &scenario.aircraft,
                (min_hours, max_hours),
                step_hours,
                &scenario.solver,
                args.jobs,
            )
            .map_err(classify)?;
            for p in &found.probes {
                eprintln!("probe {:.3} h: {} (feasibility {:.2e})", p.hours, p.status, p.feas_norm);
            }
            let search = Search {
                probes: found.probes,
                infeasible_below_hours: found.infeasible_below,
            };
            (found.hours, found.instance, found.result, Some(search))
        }
    };

    // the bundle carries the fitted field inline so it replays on its own
    let mut resolved = scenario.clone();
    if let WindSpec::Csv { .. } = resolved.wind {
        resolved.wind = WindSpec::Coefficients {
            basis: field.basis,
            a: field.a.clone(),
            b: field.b.clone(),
        };
    }
    let bundle = internal(
        Bundle::build(&resolved, hours, &inst, &result, search, fit),
        "assembling results",
    )?;
    internal(bundle.write(&dir), "writing bundle")?;
    if let Some(log) = &args.log {
        internal(
            flightopt_core::export::write_atomic(log, bundle.solver_log.as_bytes()),
            "writing log",
        )?;
    }

    println!(
        "{}: {} at {} h, fuel {:.1} kg, path {:.1} km",
        if scenario.name.is_empty() {
            "scenario"
        } else {
            &scenario.name
        },
        result.status,
        hours,
        bundle.metrics.trajectory.fuel_burned_kg,
        bundle.metrics.trajectory.path_length_km
    );
    println!("wrote {}", dir.display());
    if !result.converged() {
        return Err(Failure::NotConverged(format!(
            "solver ended {} with feasibility {:.3e} and stationarity {:.3e}",
            result.status, result.feas_norm, result.stat_norm
        )));
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let loaded = bundle::load(&args.bundle).map_err(Failure::Config)?;
    let tracks = config(flightopt_core::sim::load_tracks(&args.tracks), "reading tracks")?;
    let track = tracks.get(&args.acid).ok_or_else(|| {
        let known: Vec<&str> = tracks.keys().map(String::as_str).collect();
        Failure::Config(anyhow!("unknown acid `{}`; available: {}", args.acid, known.join(", ")))
    })?;
    let proj = config(loaded.scenario.projection(), "projection")?;
    let reference = config(flightopt_core::sim::project_track(track, &proj), "projecting track")?;
    let metrics = config(
        flightopt_core::sim::metrics(&loaded.states, Some(&reference), loaded.dt),
        "computing metrics",
    )?;

    let dir = out_dir(args.out, Some(&args.bundle))?;
    let report = serde_json::json!({ "acid": args.acid, "track_points": track.len(), "metrics": metrics });
    internal(write_json(&dir.join("compare.json"), &report), "writing comparison")?;
    println!("{:<22} {:>12}", "metric", "value");
    println!("{:<22} {:>12.3}", "travel time (h)", metrics.travel_time_h);
    println!("{:<22} {:>12.1}", "fuel burned (kg)", metrics.fuel_burned_kg);
    println!("{:<22} {:>12.1}", "path length (km)", metrics.path_length_km);
    println!(
        "{:<22} {:>12.3}",
        "max cross-track (km)",
        metrics.max_cross_track_km.unwrap_or(f64::NAN)
    );
    println!(
        "{:<22} {:>12.3}",
        "mean cross-track (km)",
        metrics.mean_cross_track_km.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), Failure> {
    let loaded = bundle::load(&args.bundle).map_err(Failure::Config)?;
    let stepper = match args.stepper {
        StepperArg::Euler => Stepper::Euler,
        StepperArg::Rk4 => Stepper::Rk4,
    };
    let (field, _) = config(loaded.scenario.wind_field(&args.bundle), "building wind field")?;
    let replayed = config(
        flightopt_core::dynamics::simulate(
            &loaded.states[0],
            &loaded.controls,
            &field,
            loaded.dt,
            &loaded.scenario.aircraft,
            stepper,
        ),
        "integrating",
    )?;
    let dir = out_dir(args.out, Some(&args.bundle))?;
    let report = internal(bundle::replay_report(&loaded, &replayed, stepper), "comparing")?;
    let name = match stepper {
        Stepper::Euler => "replay_euler",
        Stepper::Rk4 => "replay_rk4",
    };
    let proj = config(loaded.scenario.projection(), "projection")?;
    let csv = flightopt_core::export::trajectory_csv(&replayed, &loaded.controls, loaded.dt, &proj);
    internal(
        flightopt_core::export::write_atomic(&dir.join(format!("{name}.csv")), csv.as_bytes()),
        "writing replay",
    )?;
    internal(
        write_json(&dir.join(format!("{name}.json")), &report),
        "writing replay report",
    )?;
    println!(
        "{name}: max position gap {:.3e} km, scaled gap {:.3e}, final mass gap {:.3e} kg",
        report.max_position_gap_km, report.scaled_gap, report.final_mass_gap_kg
    );
    Ok(())
}

/// The error chain on one line, dropping causes already spelled out by the
/// message above them.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors, which is taken by "not converged"
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::FitWind(a) => fit_wind(a),
        Command::Optimize(a) => optimize(a),
        Command::Compare(a) => compare(a),
        Command::Replay(a) => replay(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {}", chain(e)),
                Failure::NotConverged(msg) => eprintln!("not converged: {msg}"),
                Failure::Internal(e) => eprintln!("internal error: {}", chain(e)),
            }
            ExitCode::from(f.code())
        }
    }
}
