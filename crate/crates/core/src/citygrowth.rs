//! City growth model: spatial two-stage least squares, range search and
//! sequential projection.
//!
//! The model relates the five-year log growth of each city to the lagged
//! growth of its geographic and economic neighbours, its own log size and
//! log-transformed site covariates:
//!
//! ```text
//! Δp(t+5) = (ρ_geo W_geo + ρ_e1 W_e1 + ρ_e2 W_e2) Δp(t) + α p(t) + X β + ε
//! ```
//!
//! With all ρ set to zero it reduces to a log-linear exponential growth
//! model, which is what [`estimate_without_lags`] fits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::connectivity::{
    build_econ, geo_from_neighbors, CityEconomy, ConnectivityMatrix, EconMode, NeighborList,
};
use crate::linalg::inverse_spd;
use crate::stats::adjusted_r2;
use crate::worldmodel::{City, GridCell, LonLat, ScenarioConfig, Ssp, TradeTable, Year};
use crate::{Error, Result};

/// Shift added to covariates before taking logs, in the covariate's unit.
pub const COVARIATE_SHIFT: f64 = 1.0;

/// Design columns: constant, log road density, log ocean distance, log
/// airport distance.
pub const DESIGN_COLUMNS: usize = 4;

/// First and last calendar years the interaction schedule is defined for.
pub const SCHEDULE_START: Year = 2000;
pub const SCHEDULE_END: Year = 2100;

pub fn log_covariate(value: f64) -> f64 {
    (value + COVARIATE_SHIFT).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Coefficient {
    Intercept,
    Alpha,
    RhoGeo,
    RhoE1,
    RhoE2,
    BetaRoad,
    BetaOcean,
    BetaAirport,
}

impl Coefficient {
    /// Also the column order of the second-stage regression.
    pub const ALL: [Coefficient; 8] = [
        Coefficient::Intercept,
        Coefficient::Alpha,
        Coefficient::RhoGeo,
        Coefficient::RhoE1,
        Coefficient::RhoE2,
        Coefficient::BetaRoad,
        Coefficient::BetaOcean,
        Coefficient::BetaAirport,
    ];

    pub const RHOS: [Coefficient; 3] = [Coefficient::RhoGeo, Coefficient::RhoE1, Coefficient::RhoE2];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Intercept => "intercept",
            Coefficient::Alpha => "alpha",
            Coefficient::RhoGeo => "rho_geo",
            Coefficient::RhoE1 => "rho_e1",
            Coefficient::RhoE2 => "rho_e2",
            Coefficient::BetaRoad => "beta_road",
            Coefficient::BetaOcean => "beta_ocean",
            Coefficient::BetaAirport => "beta_airport",
        }
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Coefficient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Coefficient::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown coefficient `{s}`")))
    }
}

/// Point values of the growth model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GrowthParameters {
    pub intercept: f64,
    pub alpha: f64,
    pub rho_geo: f64,
    pub rho_e1: f64,
    pub rho_e2: f64,
    pub beta_road: f64,
    pub beta_ocean: f64,
    pub beta_airport: f64,
}

impl GrowthParameters {
    pub fn get(&self, c: Coefficient) -> f64 {
        match c {
            Coefficient::Intercept => self.intercept,
            Coefficient::Alpha => self.alpha,
            Coefficient::RhoGeo => self.rho_geo,
            Coefficient::RhoE1 => self.rho_e1,
            Coefficient::RhoE2 => self.rho_e2,
            Coefficient::BetaRoad => self.beta_road,
            Coefficient::BetaOcean => self.beta_ocean,
            Coefficient::BetaAirport => self.beta_airport,
        }
    }

    pub fn set(&mut self, c: Coefficient, v: f64) {
        let slot = match c {
            Coefficient::Intercept => &mut self.intercept,
            Coefficient::Alpha => &mut self.alpha,
            Coefficient::RhoGeo => &mut self.rho_geo,
            Coefficient::RhoE1 => &mut self.rho_e1,
            Coefficient::RhoE2 => &mut self.rho_e2,
            Coefficient::BetaRoad => &mut self.beta_road,
            Coefficient::BetaOcean => &mut self.beta_ocean,
            Coefficient::BetaAirport => &mut self.beta_airport,
        };
        *slot = v;
    }

    /// `|ρ_geo| + |ρ_e1| + |ρ_e2|`; below one the lag recursion is stable.
    pub fn interaction_norm(&self) -> f64 {
        self.rho_geo.abs() + self.rho_e1.abs() + self.rho_e2.abs()
    }

    /// Non-spatial part of the growth equation for one city: intercept,
    /// size effect and covariates. `x` is a design row.
    pub fn local_growth(&self, p_log: f64, x: &[f64; DESIGN_COLUMNS]) -> f64 {
        self.intercept * x[0]
            + self.alpha * p_log
            + self.beta_road * x[1]
            + self.beta_ocean * x[2]
            + self.beta_airport * x[3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
}

/// Fitted growth model and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthModelFit {
    pub params: GrowthParameters,
    /// Only the coefficients that were estimated (the ρ are absent from a
    /// fit without spatial lags).
    pub estimates: BTreeMap<Coefficient, CoefficientEstimate>,
    /// Range of the geographic kernel, km.
    pub r: f64,
    pub cutoff: f64,
    pub sigma2: f64,
    pub r2_delta: Option<f64>,
    pub r2_level: Option<f64>,
    pub n: usize,
    pub residuals: Vec<f64>,
}

impl GrowthModelFit {
    pub fn std_error(&self, c: Coefficient) -> Option<f64> {
        self.estimates.get(&c).map(|e| e.std_error)
    }

    pub fn t_value(&self, c: Coefficient) -> Option<f64> {
        self.estimates.get(&c).map(|e| e.t_value)
    }
}

/// Per-city data at one year for the cities that have everything needed.
#[derive(Debug, Clone)]
pub struct CityPanel {
    pub year: Year,
    /// Indices into the input city list.
    pub cities: Vec<usize>,
    pub ids: Vec<String>,
    pub positions: Vec<LonLat>,
    pub countries: Vec<String>,
    /// Population levels at `year`.
    pub pop: Vec<f64>,
    pub p_log: Vec<f64>,
    /// `log(p(year) / p(year - step))`.
    pub dp_lag: Vec<f64>,
    /// `N x 4` design `[1, log road, log ocean, log airport]`.
    pub x: DMatrix<f64>,
    /// Ids of cities left out, with the reason.
    pub dropped: Vec<(String, String)>,
}

impl CityPanel {
    pub fn len(&self) -> usize {
        self.cities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cities.is_empty()
    }

    pub fn design_row(&self, i: usize) -> [f64; DESIGN_COLUMNS] {
        [self.x[(i, 0)], self.x[(i, 1)], self.x[(i, 2)], self.x[(i, 3)]]
    }

    /// Builds the panel at `year`, requiring populations at `year - step`,
    /// `year` and every year in `extra_years`.
    pub fn assemble(
        cities: &[City],
        grid: &[GridCell],
        city_cells: &[Option<usize>],
        year: Year,
        step: Year,
        extra_years: &[Year],
    ) -> Result<Self> {
        let mut panel = Self {
            year,
            cities: Vec::new(),
            ids: Vec::new(),
            positions: Vec::new(),
            countries: Vec::new(),
            pop: Vec::new(),
            p_log: Vec::new(),
            dp_lag: Vec::new(),
            x: DMatrix::zeros(0, DESIGN_COLUMNS),
            dropped: Vec::new(),
        };
        let mut rows: Vec<[f64; DESIGN_COLUMNS]> = Vec::new();
        for (i, city) in cities.iter().enumerate() {
            let Some(g) = city_cells[i] else {
                panel.dropped.push((city.id.clone(), "outside the grid".into()));
                continue;
            };
            let needed = [year - step, year].into_iter().chain(extra_years.iter().copied());
            if let Some(missing) = needed.clone().find(|y| city.pop_at(*y).is_none_or(|p| p <= 0.0)) {
                panel.dropped.push((city.id.clone(), format!("no population for {missing}")));
                continue;
            }
            let cell = &grid[g];
            let row = [
                1.0,
                log_covariate(cell.road_dens),
                log_covariate(cell.ocean_dist),
                log_covariate(cell.airport_dist),
            ];
            let prev = city.pop_at(year - step).unwrap();
            let now = city.pop_at(year).unwrap();
            let dp = (now / prev).ln();
            if row.iter().any(|v| !v.is_finite()) || !dp.is_finite() {
                panel.dropped.push((city.id.clone(), "non-finite covariates".into()));
                continue;
            }
            rows.push(row);
            panel.cities.push(i);
            panel.ids.push(city.id.clone());
            panel.positions.push(city.location);
            panel.countries.push(city.country.clone());
            panel.pop.push(now);
            panel.p_log.push(now.ln());
            panel.dp_lag.push(dp);
        }
        panel.x = DMatrix::from_fn(rows.len(), DESIGN_COLUMNS, |i, j| rows[i][j]);
        Ok(panel)
    }

    pub fn economy(&self, trade: &TradeTable) -> Result<CityEconomy> {
        let codes: Vec<&str> = self.countries.iter().map(String::as_str).collect();
        CityEconomy::new(&codes, &self.pop, trade)
    }
}

/// Estimation data: a panel at year `t` plus the growth over `(t, t+step]`.
#[derive(Debug, Clone)]
pub struct GrowthDesign {
    pub panel: CityPanel,
    /// Dependent variable `log(p(t+step) / p(t))`.
    pub dp_next: Vec<f64>,
    pub step: Year,
}

impl GrowthDesign {
    pub fn n(&self) -> usize {
        self.panel.len()
    }
}

/// Collects the estimation design at year `t` (populations at `t - step`,
/// `t`, `t + step`). Covariates come from each city's containing cell.
pub fn assemble_design(
    cities: &[City],
    grid: &[GridCell],
    city_cells: &[Option<usize>],
    t: Year,
    step: Year,
) -> Result<GrowthDesign> {
    let panel = CityPanel::assemble(cities, grid, city_cells, t, step, &[t + step])?;
    let min = DESIGN_COLUMNS + 10;
    if panel.len() < min {
        return Err(Error::Unidentifiable(format!(
            "only {} usable cities at {t}; need at least {min}",
            panel.len()
        )));
    }
    if !panel.dropped.is_empty() {
        warn!("{} cities dropped from the growth design", panel.dropped.len());
    }
    let dp_next = panel
        .cities
        .iter()
        .zip(&panel.pop)
        .map(|(&i, now)| (cities[i].pop_at(t + step).unwrap() / now).ln())
        .collect();
    Ok(GrowthDesign { panel, dp_next, step })
}

/// Row-standardized connectivity matrices for one set of cities.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    pub geo: ConnectivityMatrix,
    pub e1: ConnectivityMatrix,
    pub e2: ConnectivityMatrix,
}

impl SpatialWeights {
    pub fn new(geo: ConnectivityMatrix, e1: ConnectivityMatrix, e2: ConnectivityMatrix) -> Result<Self> {
        let n = geo.n();
        if e1.n() != n || e2.n() != n {
            return Err(Error::InvalidInput("connectivity matrices differ in size".into()));
        }
        if !(geo.is_row_standardized() && e1.is_row_standardized() && e2.is_row_standardized()) {
            return Err(Error::InvalidInput("connectivity matrices must be row-standardized".into()));
        }
        Ok(Self { geo, e1, e2 })
    }

    /// Builds all three matrices for `panel` with kernel range `r` and
    /// geographic cutoff `cutoff` km.
    pub fn for_panel(panel: &CityPanel, trade: &TradeTable, r: f64, cutoff: f64) -> Result<Self> {
        let neighbors = NeighborList::build(&panel.positions, cutoff)?;
        let economy = panel.economy(trade)?;
        Self::new(
            geo_from_neighbors(&neighbors, r, cutoff)?.row_standardize(),
            build_econ(&economy, EconMode::International).row_standardize(),
            build_econ(&economy, EconMode::National).row_standardize(),
        )
    }

    pub fn n(&self) -> usize {
        self.geo.n()
    }
}

/// Adjusted fit measures for the growth increment and the implied level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiR2 {
    pub delta: Option<f64>,
    pub level: Option<f64>,
}

/// Adjusted R² of the increment and of the level `p(t) + Δp`, both with
/// `k` regressors besides the intercept. `None` marks zero variance.
pub fn quasi_r2(observed_delta: &[f64], fitted_delta: &[f64], p_log: &[f64], k: usize) -> QuasiR2 {
    let level = |d: &[f64]| -> Vec<f64> { p_log.iter().zip(d).map(|(p, d)| p + d).collect() };
    QuasiR2 {
        delta: adjusted_r2(observed_delta, fitted_delta, k),
        level: adjusted_r2(&level(observed_delta), &level(fitted_delta), k),
    }
}

struct TwoStage {
    coefficients: Vec<f64>,
    std_errors: Vec<f64>,
    sigma2: f64,
    fitted: Vec<f64>,
    residuals: Vec<f64>,
}

/// Generic 2SLS: project regressors on the instrument space, regress `y`
/// on the projections, and evaluate residuals with the original regressors.
fn two_stage(y: &[f64], regressors: &DMatrix<f64>, instruments: &DMatrix<f64>) -> Result<TwoStage> {
    let n = y.len();
    let p = regressors.ncols();
    if n <= p {
        return Err(Error::Unidentifiable(format!("{n} observations for {p} coefficients")));
    }
    let ztz_inv = inverse_spd(&instruments.tr_mul(instruments), "instrument cross-product")?;
    let projected = instruments * (&ztz_inv * instruments.tr_mul(regressors));
    let xhx_inv = inverse_spd(&projected.tr_mul(&projected), "second-stage cross-product")?;
    let yv = DVector::from_column_slice(y);
    let beta = &xhx_inv * projected.tr_mul(&yv);
    let fitted = regressors * &beta;
    let residuals = &yv - &fitted;
    let sigma2 = residuals.norm_squared() / (n - p) as f64;
    Ok(TwoStage {
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..p).map(|j| (sigma2 * xhx_inv[(j, j)]).sqrt()).collect(),
        sigma2,
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
    })
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

fn fit_from(
    design: &GrowthDesign,
    coefficients: &[Coefficient],
    stage: TwoStage,
    r: f64,
    cutoff: f64,
) -> GrowthModelFit {
    let mut params = GrowthParameters::default();
    let mut estimates = BTreeMap::new();
    for (j, &c) in coefficients.iter().enumerate() {
        let estimate = stage.coefficients[j];
        let std_error = stage.std_errors[j];
        params.set(c, estimate);
        estimates.insert(
            c,
            CoefficientEstimate {
                estimate,
                std_error,
                t_value: estimate / std_error,
            },
        );
    }
    let r2 = quasi_r2(&design.dp_next, &stage.fitted, &design.panel.p_log, coefficients.len() - 1);
    GrowthModelFit {
        params,
        estimates,
        r,
        cutoff,
        sigma2: stage.sigma2,
        r2_delta: r2.delta,
        r2_level: r2.level,
        n: design.n(),
        residuals: stage.residuals,
    }
}

/// Spatial 2SLS at a fixed kernel range.
///
/// The three spatial lags of `Δp(t)` are instrumented with
/// `[X, p, W_geo X̃, W_e1 X̃, W_e2 X̃, W_geo² X̃]`, where `X̃` drops the
/// constant column (its lag duplicates the constant). Standard errors are
/// the classical homoskedastic 2SLS ones.
pub fn estimate_2sls(design: &GrowthDesign, weights: &SpatialWeights) -> Result<GrowthModelFit> {
    let panel = &design.panel;
    let n = design.n();
    if weights.n() != n {
        return Err(Error::InvalidInput(format!(
            "connectivity matrices are {}x{} but the design has {n} cities",
            weights.n(),
            weights.n()
        )));
    }
    let ones = vec![1.0; n];
    let covariates: Vec<Vec<f64>> = (1..DESIGN_COLUMNS).map(|j| column(&panel.x, j)).collect();

    let lag_geo = weights.geo.apply(&panel.dp_lag);
    let lag_e1 = weights.e1.apply(&panel.dp_lag);
    let lag_e2 = weights.e2.apply(&panel.dp_lag);

    let mut instruments: Vec<Vec<f64>> = vec![ones.clone()];
    instruments.extend(covariates.iter().cloned());
    instruments.push(panel.p_log.clone());
    for w in [&weights.geo, &weights.e1, &weights.e2] {
        instruments.extend(covariates.iter().map(|c| w.apply(c)));
    }
    instruments.extend(covariates.iter().map(|c| weights.geo.apply(&weights.geo.apply(c))));

    let regressors: Vec<&[f64]> = vec![
        &ones,
        &panel.p_log,
        &lag_geo,
        &lag_e1,
        &lag_e2,
        &covariates[0],
        &covariates[1],
        &covariates[2],
    ];
    let z = DMatrix::from_fn(n, instruments.len(), |i, j| instruments[j][i]);
    let x = DMatrix::from_fn(n, regressors.len(), |i, j| regressors[j][i]);
    let stage = two_stage(&design.dp_next, &x, &z)?;

    let (r, cutoff) = match weights.geo.kind() {
        crate::connectivity::MatrixKind::Geo { r, cutoff } => (r, cutoff),
        _ => (f64::NAN, f64::NAN),
    };
    Ok(fit_from(design, &Coefficient::ALL, stage, r, cutoff))
}

/// The growth model with all ρ fixed at zero. With no endogenous
/// regressors the 2SLS machinery collapses to least squares on
/// `[1, p, X̃]`.
pub fn estimate_without_lags(design: &GrowthDesign) -> Result<GrowthModelFit> {
    let panel = &design.panel;
    let n = design.n();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n], panel.p_log.clone()];
    cols.extend((1..DESIGN_COLUMNS).map(|j| column(&panel.x, j)));
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let stage = two_stage(&design.dp_next, &x, &x)?;
    let coefficients = [
        Coefficient::Intercept,
        Coefficient::Alpha,
        Coefficient::BetaRoad,
        Coefficient::BetaOcean,
        Coefficient::BetaAirport,
    ];
    Ok(fit_from(design, &coefficients, stage, f64::NAN, f64::NAN))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeCandidate {
    pub r: f64,
    pub r2_delta: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RangeSearch {
    pub best: GrowthModelFit,
    pub candidates: Vec<RangeCandidate>,
}

/// Re-estimates the model for every candidate range and keeps the one
/// with the largest adjusted R² of the increment. Ties go to the smaller
/// range. Each candidate's kernel is truncated at `cutoff_factor * r`.
pub fn search_range(
    design: &GrowthDesign,
    trade: &TradeTable,
    r_grid: &[f64],
    cutoff_factor: f64,
) -> Result<RangeSearch> {
    if r_grid.is_empty() || r_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput("range grid must be non-empty and positive".into()));
    }
    if !(cutoff_factor > 0.0) {
        return Err(Error::InvalidInput("cutoff factor must be positive".into()));
    }
    let mut grid = r_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let panel = &design.panel;
    let economy = panel.economy(trade)?;
    let e1 = build_econ(&economy, EconMode::International).row_standardize();
    let e2 = build_econ(&economy, EconMode::National).row_standardize();
    let max_cutoff = cutoff_factor * grid[grid.len() - 1];
    let neighbors = NeighborList::build(&panel.positions, max_cutoff)?;

    // Candidates run one at a time; each may hold a large kernel.
    let mut candidates = Vec::with_capacity(grid.len());
    let mut best: Option<GrowthModelFit> = None;
    for &r in &grid {
        let outcome = geo_from_neighbors(&neighbors, r, cutoff_factor * r)
            .map(ConnectivityMatrix::row_standardize)
            .and_then(|geo| SpatialWeights::new(geo, e1.clone(), e2.clone()))
            .and_then(|w| estimate_2sls(design, &w));
        match outcome {
            Ok(fit) => {
                candidates.push(RangeCandidate {
                    r,
                    r2_delta: fit.r2_delta,
                    error: None,
                });
                let better = match (&best, fit.r2_delta) {
                    (_, None) => false,
                    (None, Some(_)) => true,
                    (Some(b), Some(v)) => b.r2_delta.is_none_or(|bv| v > bv),
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => candidates.push(RangeCandidate {
                r,
                r2_delta: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let best = best.ok_or_else(|| {
        Error::Estimation(format!(
            "no range candidate could be estimated: {}",
            candidates
                .iter()
                .map(|c| format!("r={}: {}", c.r, c.error.as_deref().unwrap_or("zero variance")))
                .collect::<Vec<_>>()
                .join("; ")
        ))
    })?;
    Ok(RangeSearch { best, candidates })
}

/// Multiplier on ρ_e1 in `year`: linear from 1 in 2000 to the scenario's
/// 2100 value.
pub fn rho_e1_multiplier(ssp: Ssp, year: Year) -> Result<f64> {
    if !(SCHEDULE_START..=SCHEDULE_END).contains(&year) {
        return Err(Error::InvalidInput(format!(
            "interaction schedule is defined for {SCHEDULE_START}-{SCHEDULE_END}, got {year}"
        )));
    }
    let frac = f64::from(year - SCHEDULE_START) / f64::from(SCHEDULE_END - SCHEDULE_START);
    Ok(1.0 + (ssp.rho_e1_multiplier_2100() - 1.0) * frac)
}

pub fn scenario_rho_e1(params: &GrowthParameters, ssp: Ssp, year: Year) -> Result<f64> {
    Ok(rho_e1_multiplier(ssp, year)? * params.rho_e1)
}

/// Projected city populations; `pops[k][i]` is city `i` in `years[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CityProjection {
    pub ids: Vec<String>,
    pub years: Vec<Year>,
    pub pops: Vec<Vec<f64>>,
}

impl CityProjection {
    pub fn at(&self, year: Year) -> Option<&[f64]> {
        self.years.iter().position(|y| *y == year).map(|k| self.pops[k].as_slice())
    }
}

/// Projects the panel forward from `state.year` to `scenario.horizon`.
///
/// Each step evaluates the growth equation with zero disturbance, feeding
/// the previous step's predicted growth in as the spatial lag input, with
/// ρ_e1 scaled for the target year of the step. Populations are updated
/// as `p · exp(Δp)`, so they stay positive.
pub fn project_cities(
    params: &GrowthParameters,
    state: &CityPanel,
    weights: &SpatialWeights,
    scenario: &ScenarioConfig,
) -> Result<CityProjection> {
    if weights.n() != state.len() {
        return Err(Error::InvalidInput("connectivity does not match the projection panel".into()));
    }
    if state.pop.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidInput("base-year populations must be positive".into()));
    }
    if params.interaction_norm() >= 1.0 {
        warn!(
            "|rho_geo| + |rho_e1| + |rho_e2| = {:.3} >= 1; the projection may be unstable",
            params.interaction_norm()
        );
    }
    let step = scenario.step;
    let mut years = vec![state.year];
    let mut pops = vec![state.pop.clone()];
    let mut p_log = state.p_log.clone();
    let mut dp = state.dp_lag.clone();
    let local_rows: Vec<[f64; DESIGN_COLUMNS]> = (0..state.len()).map(|i| state.design_row(i)).collect();

    let mut year = state.year;
    while year + step <= scenario.horizon {
        let target = year + step;
        let rho_e1 = scenario_rho_e1(params, scenario.ssp, target)?;
        let lag_geo = weights.geo.apply(&dp);
        let lag_e1 = weights.e1.apply(&dp);
        let lag_e2 = weights.e2.apply(&dp);
        let mut next_pop = Vec::with_capacity(state.len());
        for i in 0..state.len() {
            let growth = params.rho_geo * lag_geo[i]
                + rho_e1 * lag_e1[i]
                + params.rho_e2 * lag_e2[i]
                + params.local_growth(p_log[i], &local_rows[i]);
            let p = pops.last().unwrap()[i] * growth.exp();
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::NonFinite {
                    city: state.ids[i].clone(),
                    year: target,
                });
            }
            dp[i] = growth;
            next_pop.push(p);
        }
        p_log = next_pop.iter().map(|p| p.ln()).collect();
        years.push(target);
        pops.push(next_pop);
        year = target;
    }
    Ok(CityProjection {
        ids: state.ids.clone(),
        years,
        pops,
    })
}
