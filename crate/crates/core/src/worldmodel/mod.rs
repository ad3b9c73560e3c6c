//! Domain entities shared by every stage: cities, grid cells, country
//! scenario series, the trade table and scenario settings.

mod geo;
mod index;
pub mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::{Error, Result};

pub use geo::{arc_distance, cell_area, LonLat, EARTH_RADIUS_KM};
pub use index::{GridLocator, PointIndex};

pub type Year = i32;

/// Length of one projection step in years.
pub const STEP_YEARS: Year = 5;

/// Shared Socioeconomic Pathway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ssp {
    Ssp1,
    Ssp2,
    Ssp3,
}

impl Ssp {
    pub const ALL: [Ssp; 3] = [Ssp::Ssp1, Ssp::Ssp2, Ssp::Ssp3];

    /// Multiplier applied to the international-interaction coefficient by
    /// 2100, relative to 2000.
    pub fn rho_e1_multiplier_2100(self) -> f64 {
        match self {
            Ssp::Ssp1 => 2.0,
            Ssp::Ssp2 => 1.0,
            Ssp::Ssp3 => 0.5,
        }
    }

    /// Scale applied to the calibrated potential ranges r′ and r′ᴬ.
    pub fn range_scale(self) -> f64 {
        match self {
            Ssp::Ssp1 => 0.5,
            Ssp::Ssp2 => 1.0,
            Ssp::Ssp3 => 2.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ssp::Ssp1 => "SSP1",
            Ssp::Ssp2 => "SSP2",
            Ssp::Ssp3 => "SSP3",
        }
    }
}

impl fmt::Display for Ssp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ssp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SSP1" => Ok(Ssp::Ssp1),
            "SSP2" => Ok(Ssp::Ssp2),
            "SSP3" => Ok(Ssp::Ssp3),
            other => Err(Error::InvalidInput(format!("unknown scenario `{other}`"))),
        }
    }
}

/// A city: a point with a country and a population time series.
#[derive(Debug, Clone, PartialEq)]
pub struct City {
    pub id: String,
    pub location: LonLat,
    pub country: String,
    pub pop: BTreeMap<Year, f64>,
}

impl City {
    pub fn pop_at(&self, year: Year) -> Option<f64> {
        self.pop.get(&year).copied()
    }
}

/// One grid cell with its land-use areas (km²) and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub id: String,
    pub center: LonLat,
    pub country: String,
    pub cell_area: f64,
    pub urban_area: f64,
    pub agri_area: f64,
    /// Total length of principal roads, km.
    pub road_dens: f64,
    pub airport_dist: f64,
    pub ocean_dist: f64,
}

impl GridCell {
    fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("grid cell {}: {what}", self.id)));
        if !self.center.is_valid() {
            return bad("coordinates out of range");
        }
        let values = [
            self.cell_area,
            self.urban_area,
            self.agri_area,
            self.road_dens,
            self.airport_dist,
            self.ocean_dist,
        ];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("areas and covariates must be finite and non-negative");
        }
        if self.cell_area <= 0.0 {
            return bad("cell_area must be positive");
        }
        if self.urban_area + self.agri_area > self.cell_area * (1.0 + 1e-9) {
            return bad("urban_area + agri_area exceeds cell_area");
        }
        Ok(())
    }
}

/// Country-level scenario values for one year.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScenarioValues {
    pub urban_pop: f64,
    pub nonurban_pop: f64,
    /// Billion USD, 2005 PPP.
    pub gdp: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Country {
    pub code: String,
    pub scenario_series: BTreeMap<Ssp, BTreeMap<Year, ScenarioValues>>,
}

impl Country {
    pub fn values(&self, ssp: Ssp, year: Year) -> Option<ScenarioValues> {
        self.scenario_series.get(&ssp)?.get(&year).copied()
    }
}

/// Bilateral trade amounts between countries. Lookups are symmetric and
/// missing pairs read as zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TradeTable {
    entries: BTreeMap<(String, String), f64>,
}

impl TradeTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_owned(), b.to_owned())
        } else {
            (b.to_owned(), a.to_owned())
        }
    }

    /// Adds `amount` to the (unordered) pair.
    pub fn insert(&mut self, a: &str, b: &str, amount: f64) -> Result<()> {
        if !amount.is_finite() || amount < 0.0 {
            return Err(Error::InvalidInput(format!(
                "trade amount for ({a}, {b}) must be finite and non-negative, got {amount}"
            )));
        }
        *self.entries.entry(Self::key(a, b)).or_insert(0.0) += amount;
        Ok(())
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        self.entries.get(&Self::key(a, b)).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.entries.contains_key(&Self::key(a, b))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.entries.iter().map(|((a, b), v)| (a.as_str(), b.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
        }
    }
}

/// Settings of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub ssp: Ssp,
    pub rho_e1_multiplier_2100: f64,
    pub range_scale: f64,
    pub base_year: Year,
    pub horizon: Year,
    pub step: Year,
}

impl ScenarioConfig {
    pub fn new(ssp: Ssp, base_year: Year, horizon: Year, step: Year) -> Result<Self> {
        let cfg = Self {
            ssp,
            rho_e1_multiplier_2100: ssp.rho_e1_multiplier_2100(),
            range_scale: ssp.range_scale(),
            base_year,
            horizon,
            step,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.rho_e1_multiplier_2100 <= 0.0 || self.range_scale <= 0.0 {
            return Err(Error::Config("scenario multipliers must be positive".into()));
        }
        if self.step <= 0 || self.base_year >= self.horizon {
            return Err(Error::Config(format!(
                "need base_year < horizon and step > 0 (got {}, {}, {})",
                self.base_year, self.horizon, self.step
            )));
        }
        if (self.horizon - self.base_year) % self.step != 0 {
            return Err(Error::Config("step must divide horizon - base_year".into()));
        }
        Ok(())
    }

    pub fn years(&self) -> Vec<Year> {
        (self.base_year..=self.horizon).step_by(self.step as usize).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Quantity {
    UrbanPop,
    NonurbanPop,
    Gdp,
    UrbanArea,
    AgriArea,
    Potential,
}

/// One value per grid cell, aligned with [`World::grid`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub year: Year,
    pub quantity: Quantity,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(year: Year, quantity: Quantity, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "{quantity:?} field for {year} contains invalid value {v}"
            )));
        }
        Ok(Self { year, quantity, values })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Base-year reference grid the ensemble weights are fitted against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservedGrid {
    pub year: Year,
    /// Aligned with [`World::grid`]; cells absent from the table read as 0.
    pub values: Vec<ScenarioValues>,
}

/// Everything loaded from the input tables.
#[derive(Debug, Clone)]
pub struct World {
    pub cities: Vec<City>,
    pub grid: Vec<GridCell>,
    pub countries: BTreeMap<String, Country>,
    pub trade: TradeTable,
    pub resolution: f64,
}

impl World {
    /// Validates invariants. Returns the world and a list of non-fatal
    /// warnings (e.g. cities whose coordinates fall in another country's
    /// cell; the country attribute wins).
    pub fn new(
        cities: Vec<City>,
        grid: Vec<GridCell>,
        countries: BTreeMap<String, Country>,
        trade: TradeTable,
        resolution: f64,
    ) -> Result<(Self, Vec<String>)> {
        if resolution <= 0.0 {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        for cell in &grid {
            cell.check()?;
        }
        for city in &cities {
            if !city.location.is_valid() {
                return Err(Error::InvalidInput(format!("city {}: coordinates out of range", city.id)));
            }
            if let Some((y, p)) = city.pop.iter().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "city {}: population in {y} must be positive, got {p}",
                    city.id
                )));
            }
            if !countries.contains_key(&city.country) {
                return Err(Error::InvalidInput(format!(
                    "city {}: country {} missing from the scenario table",
                    city.id, city.country
                )));
            }
        }
        for country in countries.values() {
            for (ssp, series) in &country.scenario_series {
                for (year, v) in series {
                    if [v.urban_pop, v.nonurban_pop, v.gdp]
                        .iter()
                        .any(|x| !x.is_finite() || *x < 0.0)
                    {
                        return Err(Error::InvalidInput(format!(
                            "scenario {ssp} {} {year}: values must be non-negative",
                            country.code
                        )));
                    }
                }
            }
        }

        let world = Self {
            cities,
            grid,
            countries,
            trade,
            resolution,
        };

        let mut warnings = Vec::new();
        let cells = world.city_cells();
        let mismatched = world
            .cities
            .iter()
            .zip(&cells)
            .filter(|(c, cell)| cell.is_some_and(|g| world.grid[g].country != c.country))
            .count();
        if mismatched > 0 {
            warnings.push(format!(
                "{mismatched} cities lie in a cell of another country; keeping their country attribute"
            ));
        }
        let outside = cells.iter().filter(|c| c.is_none()).count();
        if outside > 0 {
            warnings.push(format!("{outside} cities lie outside the grid"));
        }
        for w in &warnings {
            warn!("{w}");
        }
        Ok((world, warnings))
    }

    pub fn locator(&self) -> GridLocator {
        GridLocator::new(self.grid.iter().map(|g| g.center), self.resolution)
    }

    /// Containing cell of each city, if any.
    pub fn city_cells(&self) -> Vec<Option<usize>> {
        let loc = self.locator();
        self.cities.iter().map(|c| loc.locate(c.location)).collect()
    }

    /// Checks that every country with cells or cities has values for
    /// `ssp` on every step of `[from, to]`.
    pub fn check_scenario_coverage(&self, ssp: Ssp, from: Year, to: Year, step: Year) -> Result<()> {
        for code in self.grid.iter().map(|g| &g.country) {
            let country = self
                .countries
                .get(code)
                .ok_or_else(|| Error::Missing(format!("country {code} has no scenario series")))?;
            for year in (from..=to).step_by(step as usize) {
                if country.values(ssp, year).is_none() {
                    return Err(Error::Missing(format!("{ssp} series for {code} lacks year {year}")));
                }
            }
        }
        Ok(())
    }

    /// Cell indices grouped by country code.
    pub fn cells_by_country(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, g) in self.grid.iter().enumerate() {
            out.entry(g.country.clone()).or_default().push(i);
        }
        out
    }
}
