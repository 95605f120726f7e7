//! Spherical (pseudo-)Mercator projection onto a kilometre plane whose origin
//! sits on the departure point.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS84 semi-major axis, km.
pub const EARTH_RADIUS_KM: f64 = 6378.137;

/// Latitudes must lie strictly inside `(-MERCATOR_LAT_LIMIT, MERCATOR_LAT_LIMIT)`.
pub const MERCATOR_LAT_LIMIT: f64 = 85.06;

/// Longitude/latitude in decimal degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        let p = GeoPoint { lon, lat };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Domain(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if !self.lat.is_finite() || self.lat.abs() >= MERCATOR_LAT_LIMIT {
            return Err(Error::Domain(format!(
                "latitude {} outside the Mercator band (-{MERCATOR_LAT_LIMIT}, {MERCATOR_LAT_LIMIT})",
                self.lat
            )));
        }
        Ok(())
    }
}

/// Planar position in km east (`x`) and north (`y`) of the projection origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        PlanePoint { x, y }
    }

    pub fn distance(&self, other: &PlanePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    origin: GeoPoint,
    earth_radius: f64,
    origin_northing: f64,
}

fn northing(lat_deg: f64) -> f64 {
    (FRAC_PI_4 + lat_deg.to_radians() / 2.0).tan().ln()
}

impl Projection {
    pub fn new(origin: GeoPoint) -> Result<Self> {
        Self::with_radius(origin, EARTH_RADIUS_KM)
    }

    pub fn with_radius(origin: GeoPoint, earth_radius: f64) -> Result<Self> {
        origin.validate()?;
        if !(earth_radius.is_finite() && earth_radius > 0.0) {
            return Err(Error::Domain(format!(
                "earth radius must be positive, got {earth_radius}"
            )));
        }
        Ok(Projection {
            origin,
            earth_radius,
            origin_northing: northing(origin.lat),
        })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn earth_radius(&self) -> f64 {
        self.earth_radius
    }

    pub fn project(&self, p: GeoPoint) -> Result<PlanePoint> {
        p.validate()?;
        let x = self.earth_radius * (p.lon - self.origin.lon).to_radians();
        let y = self.earth_radius * (northing(p.lat) - self.origin_northing);
        Ok(PlanePoint { x, y })
    }

    /// Analytic inverse of [`Projection::project`]. Longitudes are not wrapped.
    pub fn unproject(&self, q: PlanePoint) -> GeoPoint {
        let lon = self.origin.lon + (q.x / self.earth_radius).to_degrees();
        let merc = q.y / self.earth_radius + self.origin_northing;
        let lat = (2.0 * merc.exp().atan() - std::f64::consts::FRAC_PI_2).to_degrees();
        GeoPoint { lon, lat }
    }
}
