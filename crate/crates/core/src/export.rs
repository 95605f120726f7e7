//! Plot-ready output files: trajectory CSV, GeoJSON, JSON summaries and the
//! solver log. Every writer goes through [`write_atomic`].

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, State};
use crate::error::{Error, Result};
use crate::geo::{PlanePoint, Projection};

pub const TRAJECTORY_HEADER: &str = "k,t_s,x_km,y_km,lon,lat,v_mps,m_kg,theta_rad,T_N,phi_radps";

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Shortest round-tripping text for `v`, switching to exponent form for very
/// small or very large magnitudes.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// One row per node. The final node has no control, so its last two fields
/// are empty.
pub fn trajectory_csv(states: &[State], controls: &[Control], dt: f64, proj: &Projection) -> String {
    let mut out = String::with_capacity(128 * states.len());
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (k, s) in states.iter().enumerate() {
        let geo = proj.unproject(s.position());
        let _ = write!(out, "{k}");
        for v in [k as f64 * dt, s.x, s.y, geo.lon, geo.lat, s.v, s.m, s.theta] {
            let _ = write!(out, ",{}", format_number(v));
        }
        out.push(',');
        match controls.get(k) {
            Some(u) => {
                let _ = writeln!(out, "{},{}", format_number(u.thrust), format_number(u.turn_rate));
            }
            None => out.push_str(",\n"),
        }
    }
    out
}

/// A row of a trajectory CSV as read back from disk.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t_s: f64,
    pub x_km: f64,
    pub y_km: f64,
    pub lon: f64,
    pub lat: f64,
    pub v_mps: f64,
    pub m_kg: f64,
    pub theta_rad: f64,
    #[serde(rename = "T_N")]
    pub thrust_n: Option<f64>,
    pub phi_radps: Option<f64>,
}

/// States and controls of a trajectory CSV written by [`trajectory_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<State>, Vec<Control>, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != TRAJECTORY_HEADER {
        return Err(Error::parse(path, 1, format!("expected header `{TRAJECTORY_HEADER}`")));
    }
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut times = Vec::new();
    let mut done = false;
    for row in rdr.deserialize::<TrajectoryRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = states.len() as u64 + 2;
        if done || row.k != states.len() {
            return Err(Error::parse(path, line, "rows out of order or after the final node"));
        }
        states.push(State {
            x: row.x_km,
            y: row.y_km,
            v: row.v_mps,
            m: row.m_kg,
            theta: row.theta_rad,
        });
        times.push(row.t_s);
        match (row.thrust_n, row.phi_radps) {
            (Some(thrust), Some(turn_rate)) => controls.push(Control { thrust, turn_rate }),
            (None, None) => done = true,
            _ => return Err(Error::parse(path, line, "half-empty control")),
        }
    }
    if !done || states.len() < 2 {
        return Err(Error::parse(
            path,
            states.len() as u64 + 1,
            "trajectory must end with a control-free node",
        ));
    }
    Ok((states, controls, times))
}

/// The node positions as a track CSV (`acid,t,lon,lat,alt`).
pub fn track_csv(acid: &str, states: &[State], dt: f64, proj: &Projection) -> String {
    let mut out = String::from("acid,t,lon,lat,alt\n");
    for (k, s) in states.iter().enumerate() {
        let g = proj.unproject(s.position());
        let _ = writeln!(
            out,
            "{acid},{},{},{},",
            format_number(k as f64 * dt),
            format_number(g.lon),
            format_number(g.lat)
        );
    }
    out
}

/// GeoJSON Feature holding the path as a lon/lat LineString.
pub fn geojson(points: &[PlanePoint], proj: &Projection, properties: serde_json::Value) -> serde_json::Value {
    let coords: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let g = proj.unproject(*p);
            [g.lon, g.lat]
        })
        .collect();
    serde_json::json!({
        "type": "Feature",
        "geometry": { "type": "LineString", "coordinates": coords },
        "properties": properties,
    })
}
