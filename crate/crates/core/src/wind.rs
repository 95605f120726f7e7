//! Polynomial wind surfaces: sample ingestion, time-slot averaging,
//! least-squares fitting and analytic evaluation.
//!
//! Positions are km in the projected plane, wind components are m/s.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, PlanePoint, Projection};

/// Sanity bound on either wind component, m/s.
pub const MAX_WIND_COMPONENT: f64 = 200.0;

/// Singular values below `RANK_RTOL * sigma_max` are treated as zero.
const RANK_RTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindSample {
    pub pos: PlanePoint,
    /// Eastward component, m/s.
    pub u: f64,
    /// Northward component, m/s.
    pub v: f64,
    pub slot: u32,
}

impl WindSample {
    pub fn new(pos: PlanePoint, u: f64, v: f64, slot: u32) -> Result<Self> {
        if !(pos.x.is_finite() && pos.y.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample position ({}, {})",
                pos.x, pos.y
            )));
        }
        for (name, c) in [("u", u), ("v", v)] {
            if !c.is_finite() || c.abs() >= MAX_WIND_COMPONENT {
                return Err(Error::InvalidInput(format!(
                    "wind component {name} = {c} outside (-{MAX_WIND_COMPONENT}, {MAX_WIND_COMPONENT}) m/s"
                )));
            }
        }
        Ok(WindSample { pos, u, v, slot })
    }
}

/// Monomial basis of the two wind surfaces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindBasis {
    /// Fixed basis of the ORD→SFO corridor fit.
    ///
    /// `w_x = a1 y⁴ + a2 y³ + a3 y² + a4 y + a5 + a6 x⁴ + a7 x³ + a8 x² + a9 x + a10
    ///        + a11 y³x + a12 y²x² + a13 yx³`
    ///
    /// `w_y = b1 y⁴ + b2 y³ + b3 y² + b4 y + b5 + b6 x⁴ + b7 x³ + b8 x² + b9 x + b10`
    ///
    /// The constant appears twice in each surface, so only `a5 + a10` and
    /// `b5 + b10` are identifiable; fits return the minimum-norm split.
    #[default]
    Quartic,
    /// Every monomial `x^i y^j` with `i + j <= degree`, for both components.
    Full { degree: u32 },
}

/// `(x exponent, y exponent)` pairs, in coefficient order.
type Terms = Vec<(u32, u32)>;

impl WindBasis {
    pub fn terms_x(&self) -> Terms {
        match *self {
            WindBasis::Quartic => vec![
                (0, 4),
                (0, 3),
                (0, 2),
                (0, 1),
                (0, 0),
                (4, 0),
                (3, 0),
                (2, 0),
                (1, 0),
                (0, 0),
                (1, 3),
                (2, 2),
                (3, 1),
            ],
            WindBasis::Full { degree } => full_terms(degree),
        }
    }

    pub fn terms_y(&self) -> Terms {
        match *self {
            WindBasis::Quartic => {
                let mut t = self.terms_x();
                t.truncate(10);
                t
            }
            WindBasis::Full { degree } => full_terms(degree),
        }
    }

    /// Highest total degree of any term.
    pub fn degree(&self) -> u32 {
        match *self {
            WindBasis::Quartic => 4,
            WindBasis::Full { degree } => degree,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WindBasis::Full { degree } if !(1..=12).contains(&degree) => Err(Error::InvalidInput(format!(
                "full basis degree must be in 1..=12, got {degree}"
            ))),
            _ => Ok(()),
        }
    }
}

fn full_terms(degree: u32) -> Terms {
    let mut t = Vec::new();
    for total in 0..=degree {
        for i in (0..=total).rev() {
            t.push((i, total - i));
        }
    }
    t
}

fn distinct(terms: &Terms) -> usize {
    let mut t = terms.clone();
    t.sort_unstable();
    t.dedup();
    t.len()
}

fn powers(v: f64, degree: u32) -> Vec<f64> {
    let mut p = Vec::with_capacity(degree as usize + 1);
    let mut acc = 1.0;
    for _ in 0..=degree {
        p.push(acc);
        acc *= v;
    }
    p
}

/// The wind field `(w_x, w_y)(x, y)` as two polynomial surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialWindField {
    pub basis: WindBasis,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Coefficients fitted to the 250 mb RAP forecast over the ORD→SFO corridor,
/// averaged over five time slots, July 2013. `b3` and `b4` are taken as
/// negative.
pub const ORD_SFO_A: [f64; 13] = [
    5.404e-12, -7.525e-9, -1.010e-5, 1.8023e-3, 3.054e-1, 1.071e-12, 8.131e-9, 1.957e-5, 1.360e-2, 3.054e-1,
    -4.493e-13, 1.372e-12, -1.971e-12,
];
pub const ORD_SFO_B: [f64; 10] = [
    6.505e-12, -2.358e-10, -2.009e-6, -8.207e-6, 6.216, -2.184e-12, -1.574e-8, -1.790e-5, 3.587e-2, 6.216,
];

impl PolynomialWindField {
    pub fn new(basis: WindBasis, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let field = PolynomialWindField { basis, a, b };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        let (nx, ny) = (self.basis.terms_x().len(), self.basis.terms_y().len());
        if self.a.len() != nx {
            return Err(Error::InvalidInput(format!(
                "w_x needs {nx} coefficients for {:?}, got {}",
                self.basis,
                self.a.len()
            )));
        }
        if self.b.len() != ny {
            return Err(Error::InvalidInput(format!(
                "w_y needs {ny} coefficients for {:?}, got {}",
                self.basis,
                self.b.len()
            )));
        }
        if let Some(c) = self.a.iter().chain(&self.b).find(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite wind coefficient {c}")));
        }
        Ok(())
    }

    /// Calm air.
    pub fn zero(basis: WindBasis) -> Self {
        PolynomialWindField {
            basis,
            a: vec![0.0; basis.terms_x().len()],
            b: vec![0.0; basis.terms_y().len()],
        }
    }

    /// Uniform wind `(u, v)` in the quartic basis.
    pub fn constant(u: f64, v: f64) -> Self {
        let mut f = Self::zero(WindBasis::Quartic);
        f.a[4] = u;
        f.b[4] = v;
        f
    }

    pub fn ord_sfo() -> Self {
        PolynomialWindField {
            basis: WindBasis::Quartic,
            a: ORD_SFO_A.to_vec(),
            b: ORD_SFO_B.to_vec(),
        }
    }

    pub fn is_calm(&self) -> bool {
        self.a.iter().chain(&self.b).all(|&c| c == 0.0)
    }

    /// `(w_x, w_y)` in m/s at `p` (km).
    pub fn eval(&self, p: PlanePoint) -> (f64, f64) {
        let d = self.basis.degree();
        let (xp, yp) = (powers(p.x, d), powers(p.y, d));
        let surface = |coef: &[f64], terms: &Terms| -> f64 {
            coef.iter()
                .zip(terms)
                .map(|(c, &(i, j))| c * xp[i as usize] * yp[j as usize])
                .sum()
        };
        (
            surface(&self.a, &self.basis.terms_x()),
            surface(&self.b, &self.basis.terms_y()),
        )
    }

    /// `[[∂w_x/∂x, ∂w_x/∂y], [∂w_y/∂x, ∂w_y/∂y]]` in (m/s)/km.
    pub fn jacobian(&self, p: PlanePoint) -> [[f64; 2]; 2] {
        let d = self.basis.degree();
        let (xp, yp) = (powers(p.x, d), powers(p.y, d));
        let grad = |coef: &[f64], terms: &Terms| -> [f64; 2] {
            let mut g = [0.0; 2];
            for (c, &(i, j)) in coef.iter().zip(terms) {
                let (i, j) = (i as usize, j as usize);
                if i > 0 {
                    g[0] += c * i as f64 * xp[i - 1] * yp[j];
                }
                if j > 0 {
                    g[1] += c * j as f64 * xp[i] * yp[j - 1];
                }
            }
            g
        };
        [
            grad(&self.a, &self.basis.terms_x()),
            grad(&self.b, &self.basis.terms_y()),
        ]
    }

    /// Second derivatives `[component][∂x or ∂y][∂x or ∂y]` in (m/s)/km².
    pub fn hessian(&self, p: PlanePoint) -> [[[f64; 2]; 2]; 2] {
        let d = self.basis.degree();
        let (xp, yp) = (powers(p.x, d), powers(p.y, d));
        let second = |coef: &[f64], terms: &Terms| -> [[f64; 2]; 2] {
            let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
            for (c, &(i, j)) in coef.iter().zip(terms) {
                let (i, j) = (i as usize, j as usize);
                let (fi, fj) = (i as f64, j as f64);
                if i > 1 {
                    xx += c * fi * (fi - 1.0) * xp[i - 2] * yp[j];
                }
                if i > 0 && j > 0 {
                    xy += c * fi * fj * xp[i - 1] * yp[j - 1];
                }
                if j > 1 {
                    yy += c * fj * (fj - 1.0) * xp[i] * yp[j - 2];
                }
            }
            [[xx, xy], [xy, yy]]
        };
        [
            second(&self.a, &self.basis.terms_x()),
            second(&self.b, &self.basis.terms_y()),
        ]
    }
}

/// Least-squares diagnostics for one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub basis: WindBasis,
    pub degree: u32,
    /// Residual sum of squares of the eastward surface, (m/s)².
    pub rss_u: f64,
    /// Residual sum of squares of the northward surface, (m/s)².
    pub rss_v: f64,
    /// Ratio of extreme retained singular values of the column-equilibrated
    /// design matrix (worse of the two surfaces).
    pub condition: f64,
    pub samples: usize,
}

/// Averages samples that share a position over all time slots present there.
/// Output order follows first appearance; `slot` is reset to 0.
pub fn average_slots(samples: &[WindSample]) -> Result<Vec<WindSample>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no wind samples to average".into()));
    }
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut sums: Vec<(PlanePoint, f64, f64, usize)> = Vec::new();
    for s in samples {
        // + 0.0 folds -0.0 into 0.0
        let key = ((s.pos.x + 0.0).to_bits(), (s.pos.y + 0.0).to_bits());
        let slot = *index.entry(key).or_insert_with(|| {
            sums.push((s.pos, 0.0, 0.0, 0));
            sums.len() - 1
        });
        let e = &mut sums[slot];
        e.1 += s.u;
        e.2 += s.v;
        e.3 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(pos, u, v, n)| WindSample {
            pos,
            u: u / n as f64,
            v: v / n as f64,
            slot: 0,
        })
        .collect())
}

struct Solved {
    coef: Vec<f64>,
    rss: f64,
    condition: f64,
}

fn least_squares(samples: &[WindSample], terms: &Terms, rhs: impl Fn(&WindSample) -> f64) -> Result<Solved> {
    let (m, n) = (samples.len(), terms.len());
    let degree = terms.iter().map(|&(i, j)| i.max(j)).max().unwrap_or(0);
    let mut design = DMatrix::<f64>::zeros(m, n);
    for (r, s) in samples.iter().enumerate() {
        let (xp, yp) = (powers(s.pos.x, degree), powers(s.pos.y, degree));
        for (c, &(i, j)) in terms.iter().enumerate() {
            design[(r, c)] = xp[i as usize] * yp[j as usize];
        }
    }
    let target = DVector::from_iterator(m, samples.iter().map(&rhs));

    // Column equilibration; the raw monomials span ~15 orders of magnitude.
    let mut col_scale = vec![1.0; n];
    for (c, scale) in col_scale.iter_mut().enumerate() {
        let norm = design.column(c).norm();
        if norm > 0.0 {
            *scale = norm;
            design.column_mut(c).unscale_mut(norm);
        }
    }

    let expected_rank = distinct(terms);
    let svd = design.clone().svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let cutoff = RANK_RTOL * sigma_max;
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    let condition = match sv.get(expected_rank.saturating_sub(1)) {
        Some(&s) if s > 0.0 => sigma_max / s,
        _ => f64::INFINITY,
    };
    if rank < expected_rank {
        return Err(Error::RankDeficient {
            rank,
            expected: expected_rank,
            condition,
        });
    }

    // Minimum-norm solution V Σ⁺ Uᵀ b.
    let u = svd.u.as_ref().expect("svd computed with U");
    let v_t = svd.v_t.as_ref().expect("svd computed with Vᵀ");
    let mut y = u.transpose() * &target;
    for (k, s) in svd.singular_values.iter().enumerate() {
        y[k] = if *s > cutoff { y[k] / s } else { 0.0 };
    }
    let scaled = v_t.transpose() * y;
    let residual = &design * &scaled - &target;
    let coef = scaled.iter().zip(&col_scale).map(|(c, s)| c / s).collect();
    Ok(Solved {
        coef,
        rss: residual.norm_squared(),
        condition,
    })
}

/// Fits both surfaces independently by minimum-norm least squares.
pub fn fit(samples: &[WindSample], basis: WindBasis) -> Result<(PolynomialWindField, FitReport)> {
    basis.validate()?;
    let (tx, ty) = (basis.terms_x(), basis.terms_y());
    let needed = tx.len().max(ty.len());
    if samples.len() < needed {
        return Err(Error::InvalidInput(format!(
            "{} samples cannot determine {needed} coefficients",
            samples.len()
        )));
    }
    let fx = least_squares(samples, &tx, |s| s.u)?;
    let fy = least_squares(samples, &ty, |s| s.v)?;
    let report = FitReport {
        basis,
        degree: basis.degree(),
        rss_u: fx.rss,
        rss_v: fy.rss,
        condition: fx.condition.max(fy.condition),
        samples: samples.len(),
    };
    Ok((
        PolynomialWindField {
            basis,
            a: fx.coef,
            b: fy.coef,
        },
        report,
    ))
}

/// Fits a full bivariate basis for each degree and reports how well it does.
/// Degrees whose fit fails (too few samples, rank loss) are skipped.
pub fn degree_search(
    samples: &[WindSample],
    degrees: impl IntoIterator<Item = u32>,
) -> Vec<(PolynomialWindField, FitReport)> {
    degrees
        .into_iter()
        .filter_map(|degree| fit(samples, WindBasis::Full { degree }).ok())
        .collect()
}

/// Reads a `lon,lat,u,v,slot` CSV and projects every row.
pub fn ingest_csv(path: &Path, proj: &Projection) -> Result<Vec<WindSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(file, path, proj)
}

pub fn read_samples<R: Read>(reader: R, source: &Path, proj: &Projection) -> Result<Vec<WindSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?
        .clone();
    let mut cols = [0usize; 5];
    for (slot, name) in ["lon", "lat", "u", "v", "slot"].iter().enumerate() {
        cols[slot] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::parse(source, 1, format!("missing column '{name}'")))?;
    }

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize, name: &str| -> Result<f64> {
            let raw = record.get(cols[k]).unwrap_or("");
            raw.parse::<f64>()
                .map_err(|_| Error::parse(source, line, format!("{name}: not a number: '{raw}'")))
        };
        let (lon, lat, u, v) = (field(0, "lon")?, field(1, "lat")?, field(2, "u")?, field(3, "v")?);
        let raw_slot = record.get(cols[4]).unwrap_or("");
        let slot: u32 = raw_slot
            .parse()
            .map_err(|_| Error::parse(source, line, format!("slot: not a non-negative integer: '{raw_slot}'")))?;
        let pos = proj
            .project(GeoPoint { lon, lat })
            .map_err(|e| Error::parse(source, line, e.to_string()))?;
        out.push(WindSample::new(pos, u, v, slot).map_err(|e| Error::parse(source, line, e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::parse(source, 0, "no wind samples"));
    }
    Ok(out)
}
