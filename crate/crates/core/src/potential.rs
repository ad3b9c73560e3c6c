//! Urbanization potential fields and their calibration against observed
//! land areas.
//!
//! The potential of a grid cell is the exponentially distance-decayed sum
//! of city populations, `q_g = Σ_c p_c exp(-d(c, g) / r')`, truncated at a
//! fixed multiple of `r'`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::linalg::{from_columns, ols};
use crate::stats::adjusted_r2;
use crate::worldmodel::{LonLat, PointIndex, Ssp};
use crate::{Error, Result};

/// Default kernel truncation, in multiples of `r'`.
pub const DEFAULT_CUTOFF_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AreaVariant {
    Urban,
    Agri,
}

impl AreaVariant {
    pub const ALL: [AreaVariant; 2] = [AreaVariant::Urban, AreaVariant::Agri];

    pub fn as_str(self) -> &'static str {
        match self {
            AreaVariant::Urban => "urban",
            AreaVariant::Agri => "agri",
        }
    }
}

impl fmt::Display for AreaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AreaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "urban" => Ok(AreaVariant::Urban),
            "agri" => Ok(AreaVariant::Agri),
            _ => Err(Error::InvalidInput(format!("unknown area variant `{s}`"))),
        }
    }
}

/// Fitted area response `area = b0 + bq * q(r')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialCalibration {
    pub variant: AreaVariant,
    /// Kernel range, km.
    pub r_prime: f64,
    pub b0: f64,
    pub bq: f64,
    pub adj_r2: f64,
    pub cutoff_factor: f64,
}

/// City-to-cell distances within a fixed cutoff, precomputed once so the
/// field can be re-evaluated for many populations or ranges.
#[derive(Debug, Clone)]
pub struct KernelSupport {
    cutoff: f64,
    n_cities: usize,
    offsets: Vec<usize>,
    cities: Vec<u32>,
    distances: Vec<f64>,
}

impl KernelSupport {
    pub fn build(cities: &[LonLat], cells: &[LonLat], cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel cutoff must be positive, got {cutoff}")));
        }
        let index = PointIndex::new(cities, (cutoff / 111.0).clamp(0.25, 30.0));
        let per_cell: Vec<Vec<(usize, f64)>> = cells.par_iter().map(|c| index.within(*c, cutoff)).collect();
        let mut offsets = Vec::with_capacity(cells.len() + 1);
        offsets.push(0);
        let total: usize = per_cell.iter().map(Vec::len).sum();
        let mut city_idx = Vec::with_capacity(total);
        let mut distances = Vec::with_capacity(total);
        for row in per_cell {
            for (c, d) in row {
                city_idx.push(c as u32);
                distances.push(d);
            }
            offsets.push(city_idx.len());
        }
        Ok(Self {
            cutoff,
            n_cities: cities.len(),
            offsets,
            cities: city_idx,
            distances,
        })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn n_cells(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_cities(&self) -> usize {
        self.n_cities
    }

    /// Potential at every cell for range `r_prime`, counting only pairs
    /// within `cutoff` (which must not exceed the support's own).
    pub fn field(&self, pops: &[f64], r_prime: f64, cutoff: f64) -> Result<Vec<f64>> {
        if !(r_prime > 0.0 && r_prime.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel range must be positive, got {r_prime}")));
        }
        if cutoff > self.cutoff * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "cutoff {cutoff} km exceeds the precomputed support of {} km",
                self.cutoff
            )));
        }
        if pops.len() != self.n_cities {
            return Err(Error::InvalidInput(format!(
                "{} populations for {} cities",
                pops.len(),
                self.n_cities
            )));
        }
        Ok((0..self.n_cells())
            .into_par_iter()
            .map(|g| {
                let span = self.offsets[g]..self.offsets[g + 1];
                self.cities[span.clone()]
                    .iter()
                    .zip(&self.distances[span])
                    .filter(|(_, d)| **d <= cutoff)
                    .map(|(c, d)| pops[*c as usize] * (-d / r_prime).exp())
                    .sum()
            })
            .collect())
    }
}

/// Potential field for one set of city populations.
pub fn potential_field(
    cities: &[LonLat],
    pops: &[f64],
    cells: &[LonLat],
    r_prime: f64,
    cutoff: f64,
) -> Result<Vec<f64>> {
    if pops.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidInput("populations must be finite and non-negative".into()));
    }
    KernelSupport::build(cities, cells, cutoff)?.field(pops, r_prime, cutoff)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCandidate {
    pub r_prime: f64,
    pub adj_r2: Option<f64>,
}

/// Fits `area = b0 + bq * q(r')` by least squares for every candidate
/// range and keeps the one with the highest adjusted R² (smaller range on
/// ties). `support` must cover `cutoff_factor * max(r_grid)`.
pub fn calibrate(
    observed_area: &[f64],
    support: &KernelSupport,
    pops: &[f64],
    variant: AreaVariant,
    r_grid: &[f64],
    cutoff_factor: f64,
) -> Result<(PotentialCalibration, Vec<CalibrationCandidate>)> {
    if observed_area.len() != support.n_cells() {
        return Err(Error::InvalidInput("observed areas do not match the grid".into()));
    }
    if observed_area.len() < 3 {
        return Err(Error::Unidentifiable("area calibration needs at least 3 cells".into()));
    }
    if crate::stats::total_sum_of_squares(observed_area) <= 0.0 {
        return Err(Error::Unidentifiable(format!("observed {variant} area has no variance")));
    }
    if r_grid.is_empty() || r_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput("range grid must be non-empty and positive".into()));
    }
    let mut grid = r_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let fits: Vec<Option<(f64, f64, f64)>> = grid
        .par_iter()
        .map(|&r| -> Result<Option<(f64, f64, f64)>> {
            let q = support.field(pops, r, cutoff_factor * r)?;
            if crate::stats::total_sum_of_squares(&q) <= 0.0 {
                return Ok(None);
            }
            let ones = vec![1.0; q.len()];
            let Ok(fit) = ols(&from_columns(&[&ones, &q]), observed_area, "area response") else {
                return Ok(None);
            };
            Ok(adjusted_r2(observed_area, &fit.fitted, 1)
                .map(|adj| (fit.coefficients[0], fit.coefficients[1], adj)))
        })
        .collect::<Result<_>>()?;

    let mut best: Option<PotentialCalibration> = None;
    let mut candidates = Vec::with_capacity(grid.len());
    for (&r_prime, fit) in grid.iter().zip(fits) {
        candidates.push(CalibrationCandidate {
            r_prime,
            adj_r2: fit.map(|f| f.2),
        });
        if let Some((b0, bq, adj_r2)) = fit {
            if best.is_none_or(|b| adj_r2 > b.adj_r2) {
                best = Some(PotentialCalibration {
                    variant,
                    r_prime,
                    b0,
                    bq,
                    adj_r2,
                    cutoff_factor,
                });
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::Unidentifiable(format!("no {variant} range candidate gives a non-degenerate potential"))
    })?;
    Ok((best, candidates))
}

/// Kernel range used under a scenario: the calibrated range scaled by the
/// scenario's compactness factor.
pub fn scenario_range(calibration: &PotentialCalibration, ssp: Ssp) -> f64 {
    calibration.r_prime * ssp.range_scale()
}

/// Default calibration grid: 2 km steps up to `min(r, 100)`.
pub fn default_r_prime_grid(r: f64) -> Vec<f64> {
    let cap = r.min(100.0);
    (1..).map(|k| 2.0 * f64::from(k)).take_while(|v| *v <= cap + 1e-9).collect()
}
