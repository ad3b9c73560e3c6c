//! Country-to-grid downscaling with an ensemble of square-root dasymetric
//! sub-models.
//!
//! Sub-model `k` distributes a country total `Y` over the country's cells
//! in proportion to `sqrt(w_g * a_gk)`, where `w` is the scenario area
//! weight of the target and `a_k = offset * control` an auxiliary
//! variable. The ensemble is a convex combination of the sub-model fields,
//! so every country total is preserved exactly. Weights are learned by
//! stage-wise boosting against an observed base-year grid.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::worldmodel::GridCell;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    UrbanPop,
    NonurbanPop,
    Gdp,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::UrbanPop, Target::NonurbanPop, Target::Gdp];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::UrbanPop => "urban_pop",
            Target::NonurbanPop => "nonurban_pop",
            Target::Gdp => "gdp",
        }
    }

    pub fn offsets(self) -> &'static [Offset] {
        match self {
            Target::UrbanPop => &[Offset::UrbanArea, Offset::UrbanPopGrid, Offset::Potential],
            Target::NonurbanPop => &[Offset::AgriArea, Offset::UrbanPopGrid, Offset::Potential],
            Target::Gdp => &[Offset::UAgriArea, Offset::UrbanPopGrid, Offset::Potential, Offset::SspPop],
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown target `{s}`")))
    }
}

/// Cell quantity a sub-model's auxiliary variable is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Offset {
    UrbanArea,
    AgriArea,
    /// Urban plus agricultural area.
    UAgriArea,
    /// Projected city populations summed into their cells.
    UrbanPopGrid,
    Potential,
    /// Downscaled urban plus non-urban population.
    SspPop,
}

impl Offset {
    pub fn as_str(self) -> &'static str {
        match self {
            Offset::UrbanArea => "urban_area",
            Offset::AgriArea => "agri_area",
            Offset::UAgriArea => "uagri_area",
            Offset::UrbanPopGrid => "urban_pop_grid",
            Offset::Potential => "potential",
            Offset::SspPop => "ssp_pop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Control {
    Constant,
    Road,
    Airport,
    Ocean,
}

impl Control {
    pub const ALL: [Control; 4] = [Control::Constant, Control::Road, Control::Airport, Control::Ocean];

    pub fn as_str(self) -> &'static str {
        match self {
            Control::Constant => "constant",
            Control::Road => "road",
            Control::Airport => "airport",
            Control::Ocean => "ocean",
        }
    }

    /// Road density as is; distances as proximity `1 / (1 + d)`.
    pub fn value(self, cell: &GridCell) -> f64 {
        match self {
            Control::Constant => 1.0,
            Control::Road => cell.road_dens,
            Control::Airport => 1.0 / (1.0 + cell.airport_dist),
            Control::Ocean => 1.0 / (1.0 + cell.ocean_dist),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubModel {
    pub index: usize,
    pub offset: Offset,
    pub control: Control,
}

/// Every offset crossed with every control, offsets outermost.
pub fn submodels(target: Target) -> Vec<SubModel> {
    target
        .offsets()
        .iter()
        .flat_map(|o| Control::ALL.iter().map(move |c| (*o, *c)))
        .enumerate()
        .map(|(index, (offset, control))| SubModel { index, offset, control })
        .collect()
}

/// Per-cell inputs for one year and scenario, aligned with the grid.
#[derive(Debug, Clone, Copy)]
pub struct YearInputs<'a> {
    pub urban_area: &'a [f64],
    pub agri_area: &'a [f64],
    pub urban_pop_grid: &'a [f64],
    pub potential: &'a [f64],
    /// Required only by the GDP target.
    pub ssp_pop: Option<&'a [f64]>,
}

impl YearInputs<'_> {
    fn len(&self) -> usize {
        self.urban_area.len()
    }

    fn check(&self, n: usize) -> Result<()> {
        let lens = [self.urban_area.len(), self.agri_area.len(), self.urban_pop_grid.len(), self.potential.len()];
        if lens.iter().any(|l| *l != n) || self.ssp_pop.is_some_and(|p| p.len() != n) {
            return Err(Error::InvalidInput("downscaling inputs do not match the grid".into()));
        }
        Ok(())
    }

    pub fn offset_value(&self, offset: Offset, g: usize) -> Result<f64> {
        Ok(match offset {
            Offset::UrbanArea => self.urban_area[g],
            Offset::AgriArea => self.agri_area[g],
            Offset::UAgriArea => self.urban_area[g] + self.agri_area[g],
            Offset::UrbanPopGrid => self.urban_pop_grid[g],
            Offset::Potential => self.potential[g],
            Offset::SspPop => self
                .ssp_pop
                .ok_or_else(|| Error::Missing("downscaled population for the GDP offset".into()))?[g],
        })
    }

    /// Scenario area weight of the target.
    pub fn area_weight(&self, target: Target, g: usize) -> f64 {
        match target {
            Target::UrbanPop => self.urban_area[g],
            Target::NonurbanPop => self.agri_area[g],
            Target::Gdp => self.urban_area[g] + self.agri_area[g],
        }
    }
}

/// `offset * control` for one cell.
pub fn auxiliary_value(cell: &GridCell, g: usize, sub: &SubModel, inputs: &YearInputs<'_>) -> Result<f64> {
    Ok(inputs.offset_value(sub.offset, g)? * sub.control.value(cell))
}

/// Distributes `total` over cells in proportion to `sqrt(weight * aux)`.
/// Returns the shares and whether the uniform fallback was used because
/// every product was zero.
pub fn dasymetric_share(weight: &[f64], aux: &[f64], total: f64) -> (Vec<f64>, bool) {
    let roots: Vec<f64> = weight.iter().zip(aux).map(|(w, a)| (w * a).max(0.0).sqrt()).collect();
    let sum: f64 = roots.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        (roots.iter().map(|r| r / sum * total).collect(), false)
    } else {
        let n = weight.len().max(1) as f64;
        (vec![total / n; weight.len()], true)
    }
}

/// Grid cell indices by country code.
pub type CountryCells = BTreeMap<String, Vec<usize>>;

/// One sub-model field over the whole grid. Countries whose weights are
/// all zero get a uniform distribution and are listed in the second
/// return value.
pub fn dasymetric_field(
    countries: &CountryCells,
    weight: &[f64],
    aux: &[f64],
    totals: &BTreeMap<String, f64>,
) -> Result<(Vec<f64>, Vec<String>)> {
    let mut field = vec![0.0; weight.len()];
    let mut fallbacks = Vec::new();
    for (code, cells) in countries {
        let total = *totals
            .get(code)
            .ok_or_else(|| Error::Missing(format!("country total for {code}")))?;
        let w: Vec<f64> = cells.iter().map(|&g| weight[g]).collect();
        let a: Vec<f64> = cells.iter().map(|&g| aux[g]).collect();
        let (share, fallback) = dasymetric_share(&w, &a, total);
        if fallback {
            fallbacks.push(code.clone());
        }
        for (&g, v) in cells.iter().zip(share) {
            field[g] = v;
        }
    }
    Ok((field, fallbacks))
}

/// All sub-model fields of `target` for one year, in [`submodels`] order.
pub fn submodel_fields(
    target: Target,
    grid: &[GridCell],
    countries: &CountryCells,
    inputs: &YearInputs<'_>,
    totals: &BTreeMap<String, f64>,
) -> Result<Vec<Vec<f64>>> {
    inputs.check(grid.len())?;
    let weight: Vec<f64> = (0..inputs.len()).map(|g| inputs.area_weight(target, g)).collect();
    let fields: Vec<(Vec<f64>, Vec<String>)> = submodels(target)
        .par_iter()
        .map(|sub| {
            let aux: Vec<f64> = grid
                .iter()
                .enumerate()
                .map(|(g, cell)| auxiliary_value(cell, g, sub, inputs))
                .collect::<Result<_>>()?;
            dasymetric_field(countries, &weight, &aux, totals)
        })
        .collect::<Result<_>>()?;
    let subs = submodels(target);
    Ok(fields
        .into_iter()
        .zip(subs)
        .map(|((field, fallbacks), sub)| {
            if !fallbacks.is_empty() {
                warn!(
                    "{target} sub-model {} ({} x {}): uniform fallback in {}",
                    sub.index,
                    sub.offset.as_str(),
                    sub.control.as_str(),
                    fallbacks.join(", ")
                );
            }
            field
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostingParams {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 200,
        }
    }
}

/// Fitted ensemble of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct DownscaleEnsemble {
    pub target: Target,
    pub submodels: Vec<SubModel>,
    /// Non-negative, summing to one.
    pub weights: Vec<f64>,
    /// Accumulated boosting coefficients before the simplex projection.
    pub raw: Vec<f64>,
    /// Training loss before the first iteration and after each one.
    pub trace: Vec<f64>,
    /// Sub-model chosen at each iteration; `None` once no step helps.
    pub chosen: Vec<Option<usize>>,
}

/// Stage-wise least-squares boosting over fixed fields, followed by
/// projection onto the simplex.
pub fn fit_weights(
    target: Target,
    fields: &[Vec<f64>],
    observed: &[f64],
    params: BoostingParams,
) -> Result<DownscaleEnsemble> {
    let subs = submodels(target);
    if fields.len() != subs.len() {
        return Err(Error::InvalidInput(format!(
            "{target} expects {} sub-model fields, got {}",
            subs.len(),
            fields.len()
        )));
    }
    let raw_fit = boost(fields, observed, params)?;
    Ok(DownscaleEnsemble {
        target,
        submodels: subs,
        weights: project_to_simplex(&raw_fit.coefficients)?,
        raw: raw_fit.coefficients,
        trace: raw_fit.trace,
        chosen: raw_fit.chosen,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Boosted {
    pub coefficients: Vec<f64>,
    pub trace: Vec<f64>,
    pub chosen: Vec<Option<usize>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Boosting core over any number of fields. Each iteration picks the field
/// with the largest squared-error reduction under its optimal step and adds
/// `learning_rate` times that step. Steps may be negative so that a field
/// picked early can be walked back; restricting them to be non-negative
/// stalls as soon as no field correlates positively with the residual.
pub fn boost(fields: &[Vec<f64>], observed: &[f64], params: BoostingParams) -> Result<Boosted> {
    if fields.is_empty() {
        return Err(Error::InvalidInput("no sub-model fields".into()));
    }
    if fields.iter().any(|f| f.len() != observed.len()) {
        return Err(Error::InvalidInput("sub-model fields do not match the observed grid".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) || params.iterations == 0 {
        return Err(Error::Config("learning rate must be in (0, 1] and iterations positive".into()));
    }
    let norms: Vec<f64> = fields.iter().map(|f| dot(f, f)).collect();
    let mut residual = observed.to_vec();
    let mut loss = dot(&residual, &residual);
    let mut coefficients = vec![0.0; fields.len()];
    let mut trace = vec![loss];
    let mut chosen = Vec::with_capacity(params.iterations);

    for iteration in 0..params.iterations {
        let mut best: Option<(usize, f64, f64)> = None;
        for (k, f) in fields.iter().enumerate() {
            if norms[k] <= 0.0 {
                continue;
            }
            let inner = dot(&residual, f);
            if inner == 0.0 {
                continue;
            }
            let reduction = inner * inner / norms[k];
            if best.is_none_or(|b| reduction > b.2) {
                best = Some((k, inner / norms[k], reduction));
            }
        }
        let step = best.and_then(|(k, gamma, _)| {
            let delta = params.learning_rate * gamma;
            let next: Vec<f64> = residual.iter().zip(&fields[k]).map(|(r, f)| r - delta * f).collect();
            let next_loss = dot(&next, &next);
            (next_loss < loss).then_some((k, delta, next, next_loss))
        });
        match step {
            Some((k, delta, next, next_loss)) => {
                coefficients[k] += delta;
                residual = next;
                loss = next_loss;
                chosen.push(Some(k));
            }
            None if iteration == 0 => {
                return Err(Error::Estimation(
                    "no sub-model reduces the training loss; inputs are degenerate".into(),
                ))
            }
            None => chosen.push(None),
        }
        trace.push(loss);
    }
    Ok(Boosted {
        coefficients,
        trace,
        chosen,
    })
}

/// Clips negative coefficients and rescales to sum to one.
pub fn project_to_simplex(coefficients: &[f64]) -> Result<Vec<f64>> {
    let clipped: Vec<f64> = coefficients.iter().map(|c| c.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::Estimation("boosting produced no positive weight".into()));
    }
    Ok(clipped.iter().map(|c| c / sum).collect())
}

/// `Σ_k ω_k f_k` cell by cell.
pub fn combine(weights: &[f64], fields: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != fields.len() {
        return Err(Error::InvalidInput("weights and fields differ in number".into()));
    }
    let n = fields.first().map_or(0, Vec::len);
    Ok((0..n)
        .into_par_iter()
        .map(|g| weights.iter().zip(fields).map(|(w, f)| w * f[g]).sum())
        .collect())
}

/// Ensemble prediction for one year from that year's inputs and totals.
pub fn downscale(
    ensemble: &DownscaleEnsemble,
    grid: &[GridCell],
    countries: &CountryCells,
    inputs: &YearInputs<'_>,
    totals: &BTreeMap<String, f64>,
) -> Result<Vec<f64>> {
    let fields = submodel_fields(ensemble.target, grid, countries, inputs, totals)?;
    combine(&ensemble.weights, &fields)
}

/// Global contribution of each sub-model: `ω_k Σf_k / Σ_j ω_j Σf_j`.
pub fn importance_shares(weights: &[f64], fields: &[Vec<f64>]) -> Vec<f64> {
    let mass: Vec<f64> = weights
        .iter()
        .zip(fields)
        .map(|(w, f)| w * f.iter().sum::<f64>())
        .collect();
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        mass.iter().map(|m| m / total).collect()
    } else {
        weights.to_vec()
    }
}

/// GDP downscaling on top of finished population downscales: the summed
/// urban and non-urban grids become the population offset.
pub fn downscale_gdp_chain(
    gdp: &DownscaleEnsemble,
    grid: &[GridCell],
    countries: &CountryCells,
    inputs: &YearInputs<'_>,
    urban_pop: Option<&[f64]>,
    nonurban_pop: Option<&[f64]>,
    gdp_totals: &BTreeMap<String, f64>,
) -> Result<Vec<f64>> {
    if gdp.target != Target::Gdp {
        return Err(Error::InvalidInput(format!("expected the GDP ensemble, got {}", gdp.target)));
    }
    let (Some(u), Some(v)) = (urban_pop, nonurban_pop) else {
        return Err(Error::Missing("population downscales for the GDP chain".into()));
    };
    let pop: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
    let chained = YearInputs {
        ssp_pop: Some(&pop),
        ..*inputs
    };
    downscale(gdp, grid, countries, &chained, gdp_totals)
}

/// Projected city populations summed into their containing cells.
pub fn grid_city_population(n_cells: usize, city_cells: &[Option<usize>], pops: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n_cells];
    for (cell, p) in city_cells.iter().zip(pops) {
        if let Some(g) = cell {
            out[*g] += p;
        }
    }
    out
}
