//! Synthetic test worlds with known generating parameters.
//!
//! Countries occupy rectangular blocks of a regular grid. City sizes follow
//! a rank-size law; the three observed population years are simulated with
//! the growth model itself, land areas follow the potential response, and
//! the base-year reference grid is a known mixture of sub-model fields.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{RunConfig, SyntheticWorldSpec};
use crate::citygrowth::{log_covariate, GrowthParameters};
use crate::connectivity::{build_econ, build_geo, CityEconomy, EconMode};
use crate::downscaler::{submodel_fields, CountryCells, Target, YearInputs};
use crate::potential::potential_field;
use crate::worldmodel::io::{
    format_number, write_cities, write_grid, write_observed, write_scenario, write_trade, TableWriter,
};
use crate::worldmodel::{
    arc_distance, cell_area, City, Country, GridCell, GridLocator, LonLat, ObservedGrid, PointIndex, ScenarioValues,
    Ssp, TradeTable, Year,
};
use crate::{Error, Result};

/// Everything a synthetic run needs, plus the generating parameters.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub cities: Vec<City>,
    pub grid: Vec<GridCell>,
    pub countries: BTreeMap<String, Country>,
    pub trade: TradeTable,
    pub observed: ObservedGrid,
    /// `(parameter, value)` pairs in a fixed order.
    pub truth: Vec<(String, f64)>,
    /// Years with city populations, oldest first.
    pub history_years: [Year; 3],
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

struct Layout {
    block_cols: usize,
    block_rows: usize,
    width: usize,
    height: usize,
}

impl Layout {
    fn new(spec: &SyntheticWorldSpec) -> Self {
        let block_cols = spec.country_columns;
        let block_rows = spec.n_countries.div_ceil(block_cols);
        Self {
            block_cols,
            block_rows,
            width: spec.grid_columns / block_cols,
            height: spec.grid_rows / block_rows,
        }
    }

    /// Country index owning grid column/row, if any.
    fn owner(&self, col: usize, row: usize, n: usize) -> Option<usize> {
        let bx = (col / self.width).min(self.block_cols - 1);
        let by = (row / self.height).min(self.block_rows - 1);
        let k = by * self.block_cols + bx;
        (k < n).then_some(k)
    }

    /// Column and row ranges of country `k`'s block, end-exclusive.
    fn block(&self, k: usize, spec: &SyntheticWorldSpec) -> (usize, usize, usize, usize) {
        let bx = k % self.block_cols;
        let by = k / self.block_cols;
        let c1 = if bx == self.block_cols - 1 { spec.grid_columns } else { (bx + 1) * self.width };
        let r1 = if by == self.block_rows - 1 { spec.grid_rows } else { (by + 1) * self.height };
        (bx * self.width, c1, by * self.height, r1)
    }
}

pub fn country_code(k: usize) -> String {
    format!("C{k:02}")
}

/// Growth parameters the world is simulated with.
pub fn true_growth(spec: &SyntheticWorldSpec) -> GrowthParameters {
    GrowthParameters {
        intercept: spec.intercept,
        alpha: spec.alpha,
        rho_geo: spec.rho_geo,
        rho_e1: spec.rho_e1,
        rho_e2: spec.rho_e2,
        beta_road: spec.beta_road,
        beta_ocean: spec.beta_ocean,
        beta_airport: spec.beta_airport,
    }
}

pub fn generate_world(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = Layout::new(spec);
    let res = spec.resolution;
    let n_countries = spec.n_countries;

    // Grid.
    let mut grid = Vec::with_capacity(spec.grid_columns * spec.grid_rows);
    for row in 0..spec.grid_rows {
        for col in 0..spec.grid_columns {
            let Some(k) = layout.owner(col, row, n_countries) else {
                continue;
            };
            let center = LonLat::new(
                spec.origin_lon + (col as f64 + 0.5) * res,
                spec.origin_lat + (row as f64 + 0.5) * res,
            );
            grid.push(GridCell {
                id: format!("g{:03}_{:03}", row, col),
                center,
                country: country_code(k),
                cell_area: cell_area(center.lat, res),
                urban_area: 0.0,
                agri_area: 0.0,
                road_dens: 0.0,
                airport_dist: 0.0,
                ocean_dist: 0.0,
            });
        }
    }

    // City sizes from a global rank-size law, shuffled across countries.
    let n_cities = n_countries * spec.cities_per_country;
    let mut sizes: Vec<f64> = (1..=n_cities)
        .map(|r| spec.largest_city * (r as f64).powf(-spec.zipf_exponent) * (spec.size_noise * normal(&mut rng)).exp())
        .collect();
    sizes.shuffle(&mut rng);
    let mut positions = Vec::with_capacity(n_cities);
    let mut city_country = Vec::with_capacity(n_cities);
    for i in 0..n_cities {
        let k = i / spec.cities_per_country;
        let (c0, c1, r0, r1) = layout.block(k, spec);
        let lon0 = spec.origin_lon + c0 as f64 * res;
        let lon1 = spec.origin_lon + c1 as f64 * res;
        let lat0 = spec.origin_lat + r0 as f64 * res;
        let lat1 = spec.origin_lat + r1 as f64 * res;
        let margin = 0.01 * res;
        positions.push(LonLat::new(
            rng.random_range(lon0 + margin..lon1 - margin),
            rng.random_range(lat0 + margin..lat1 - margin),
        ));
        city_country.push(country_code(k));
    }

    // Covariates. Roads follow cities; the ocean lies west of the grid;
    // airports sit at the largest cities.
    let city_index = PointIndex::new(&positions, 2.0);
    let west = spec.origin_lon;
    let mut order: Vec<usize> = (0..n_cities).collect();
    order.sort_by(|a, b| sizes[*b].total_cmp(&sizes[*a]).then(a.cmp(b)));
    let mut airports: Vec<usize> = order[..(n_cities / 50).max(1)].to_vec();
    for k in 0..n_countries {
        let largest = (k * spec.cities_per_country..(k + 1) * spec.cities_per_country)
            .max_by(|a, b| sizes[*a].total_cmp(&sizes[*b]))
            .unwrap();
        if !airports.contains(&largest) {
            airports.push(largest);
        }
    }
    let airport_pts: Vec<LonLat> = airports.iter().map(|i| positions[*i]).collect();
    for cell in &mut grid {
        let mut road = 0.0;
        city_index.for_each_within(cell.center, 300.0, |i, d| {
            road += 20.0 * (sizes[i] / 1e4).sqrt() * (-d / 60.0).exp();
        });
        cell.road_dens = road + rng.random_range(0.0..5.0);
        cell.ocean_dist = arc_distance(cell.center, LonLat::new(west, cell.center.lat));
        cell.airport_dist = airport_pts
            .iter()
            .map(|a| arc_distance(cell.center, *a))
            .fold(f64::INFINITY, f64::min);
    }
    let locator = GridLocator::new(grid.iter().map(|g| g.center), res);
    let city_cells: Vec<usize> = positions
        .iter()
        .map(|p| locator.locate(*p).ok_or_else(|| Error::InvalidInput("generated city outside the grid".into())))
        .collect::<Result<_>>()?;
    let design: Vec<[f64; 4]> = city_cells
        .iter()
        .map(|&g| {
            let c = &grid[g];
            [
                1.0,
                log_covariate(c.road_dens),
                log_covariate(c.ocean_dist),
                log_covariate(c.airport_dist),
            ]
        })
        .collect();

    // Gravity trade between country block centres, no domestic pairs.
    let mut country_pop = vec![0.0; n_countries];
    for (i, s) in sizes.iter().enumerate() {
        country_pop[i / spec.cities_per_country] += s;
    }
    let centroid = |k: usize| {
        let (c0, c1, r0, r1) = layout.block(k, spec);
        LonLat::new(
            spec.origin_lon + 0.5 * (c0 + c1) as f64 * res,
            spec.origin_lat + 0.5 * (r0 + r1) as f64 * res,
        )
    };
    let mut trade = TradeTable::new();
    for a in 0..n_countries {
        for b in a + 1..n_countries {
            let d = arc_distance(centroid(a), centroid(b)).max(1.0);
            let amount = spec.trade_scale * country_pop[a] * country_pop[b] / d.powf(spec.trade_distance_decay);
            trade.insert(&country_code(a), &country_code(b), amount)?;
        }
    }

    // Population history simulated with the growth model.
    let params = true_growth(spec);
    let step = spec.step;
    let years = [spec.base_year - 2 * step, spec.base_year - step, spec.base_year];
    let geo = build_geo(&positions, spec.r, spec.geo_cutoff_factor * spec.r)?.row_standardize();
    let codes: Vec<&str> = city_country.iter().map(String::as_str).collect();
    let mut pops = vec![sizes.clone()];
    let country_shock: Vec<f64> = (0..n_countries).map(|_| spec.country_lag_noise * normal(&mut rng)).collect();
    let mut dp: Vec<f64> = (0..n_cities)
        .map(|i| {
            params.local_growth(sizes[i].ln(), &design[i])
                + country_shock[i / spec.cities_per_country]
                + spec.lag_noise * normal(&mut rng)
        })
        .collect();
    for _ in 1..years.len() {
        let prev = pops.last().unwrap().clone();
        let economy = CityEconomy::new(&codes, &prev, &trade)?;
        let e1 = build_econ(&economy, EconMode::International).row_standardize();
        let e2 = build_econ(&economy, EconMode::National).row_standardize();
        let lag_geo = geo.apply(&dp);
        let lag_e1 = e1.apply(&dp);
        let lag_e2 = e2.apply(&dp);
        let next_dp: Vec<f64> = (0..n_cities)
            .map(|i| {
                params.rho_geo * lag_geo[i]
                    + params.rho_e1 * lag_e1[i]
                    + params.rho_e2 * lag_e2[i]
                    + params.local_growth(prev[i].ln(), &design[i])
                    + spec.growth_noise * normal(&mut rng)
            })
            .collect();
        pops.push(prev.iter().zip(&next_dp).map(|(p, d)| p * d.exp()).collect());
        dp = next_dp;
    }
    let cities: Vec<City> = (0..n_cities)
        .map(|i| City {
            id: format!("c{i:05}"),
            location: positions[i],
            country: city_country[i].clone(),
            pop: years.iter().zip(&pops).map(|(y, p)| (*y, p[i])).collect(),
        })
        .collect();
    let base_pop = pops.last().unwrap();

    // Base-year land areas from the potential response.
    let centers: Vec<LonLat> = grid.iter().map(|g| g.center).collect();
    let q = potential_field(&positions, base_pop, &centers, spec.r_prime, 5.0 * spec.r_prime)?;
    let q_agri = potential_field(&positions, base_pop, &centers, spec.r_prime_agri, 5.0 * spec.r_prime_agri)?;
    let sigma = spec.area_noise;
    for (g, cell) in grid.iter_mut().enumerate() {
        let noise = |rng: &mut ChaCha8Rng| (sigma * normal(rng) - 0.5 * sigma * sigma).exp();
        let urban = ((spec.b0 + spec.bq * q[g]) * noise(&mut rng)).clamp(0.0, cell.cell_area);
        let agri = ((spec.b0_agri + spec.bq_agri * q_agri[g]) * noise(&mut rng)).clamp(0.0, cell.cell_area - urban);
        cell.urban_area = urban;
        cell.agri_area = agri;
    }

    // Base-year reference grid from the true mixtures.
    let mut countries_cells = CountryCells::new();
    for (g, cell) in grid.iter().enumerate() {
        countries_cells.entry(cell.country.clone()).or_default().push(g);
    }
    let mut urban_totals = BTreeMap::new();
    let mut nonurban_totals = BTreeMap::new();
    let mut gdp_totals = BTreeMap::new();
    for k in 0..n_countries {
        let code = country_code(k);
        let urban: f64 = (k * spec.cities_per_country..(k + 1) * spec.cities_per_country)
            .map(|i| base_pop[i])
            .sum();
        let nonurban = urban * rng.random_range(0.3..1.5);
        let per_capita = rng.random_range(5e-6..4e-5);
        urban_totals.insert(code.clone(), urban);
        nonurban_totals.insert(code.clone(), nonurban);
        gdp_totals.insert(code, (urban + nonurban) * per_capita);
    }
    let mut city_pop_grid = vec![0.0; grid.len()];
    for (i, &g) in city_cells.iter().enumerate() {
        city_pop_grid[g] += base_pop[i];
    }
    let urban_area: Vec<f64> = grid.iter().map(|c| c.urban_area).collect();
    let agri_area: Vec<f64> = grid.iter().map(|c| c.agri_area).collect();
    let mut inputs = YearInputs {
        urban_area: &urban_area,
        agri_area: &agri_area,
        urban_pop_grid: &city_pop_grid,
        potential: &q,
        ssp_pop: None,
    };
    let mixture = |target: Target, inputs: &YearInputs<'_>, totals, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let fields = submodel_fields(target, &grid, &countries_cells, inputs, totals)?;
        let weights = &spec.omega[&target];
        let s = spec.observed_noise;
        Ok((0..grid.len())
            .map(|g| {
                let clean: f64 = weights.iter().map(|(k, w)| w * fields[*k][g]).sum();
                clean * (s * normal(rng) - 0.5 * s * s).exp()
            })
            .collect())
    };
    let obs_urban = mixture(Target::UrbanPop, &inputs, &urban_totals, &mut rng)?;
    let obs_nonurban = mixture(Target::NonurbanPop, &inputs, &nonurban_totals, &mut rng)?;
    let obs_pop: Vec<f64> = obs_urban.iter().zip(&obs_nonurban).map(|(a, b)| a + b).collect();
    inputs.ssp_pop = Some(&obs_pop);
    let obs_gdp = mixture(Target::Gdp, &inputs, &gdp_totals, &mut rng)?;
    let observed = ObservedGrid {
        year: spec.base_year,
        values: (0..grid.len())
            .map(|g| ScenarioValues {
                urban_pop: obs_urban[g],
                nonurban_pop: obs_nonurban[g],
                gdp: obs_gdp[g],
            })
            .collect(),
    };

    // Scenario series anchored at the observed country totals.
    let mut countries = BTreeMap::new();
    for (code, cells) in &countries_cells {
        let base = ScenarioValues {
            urban_pop: cells.iter().map(|&g| obs_urban[g]).sum(),
            nonurban_pop: cells.iter().map(|&g| obs_nonurban[g]).sum(),
            gdp: cells.iter().map(|&g| obs_gdp[g]).sum(),
        };
        let growth = [
            rng.random_range(0.2..1.0),
            rng.random_range(-0.5..0.2),
            rng.random_range(1.0..4.0),
        ];
        let mut country = Country {
            code: code.clone(),
            ..Default::default()
        };
        for ssp in Ssp::ALL {
            let factor = match ssp {
                Ssp::Ssp1 => [1.1, 0.8, 1.3],
                Ssp::Ssp2 => [1.0, 1.0, 1.0],
                Ssp::Ssp3 => [0.9, 1.2, 0.7],
            };
            let series = (spec.base_year..=spec.horizon)
                .step_by(step as usize)
                .map(|year| {
                    let frac = f64::from(year - spec.base_year) / 100.0;
                    let scale = |j: usize| (1.0 + growth[j] * frac) * (1.0 + (factor[j] - 1.0) * frac);
                    (
                        year,
                        ScenarioValues {
                            urban_pop: base.urban_pop * scale(0),
                            nonurban_pop: base.nonurban_pop * scale(1),
                            gdp: base.gdp * scale(2),
                        },
                    )
                })
                .collect();
            country.scenario_series.insert(ssp, series);
        }
        countries.insert(code.clone(), country);
    }

    let mut truth: Vec<(String, f64)> = vec![
        ("intercept".into(), spec.intercept),
        ("alpha".into(), spec.alpha),
        ("rho_geo".into(), spec.rho_geo),
        ("rho_e1".into(), spec.rho_e1),
        ("rho_e2".into(), spec.rho_e2),
        ("beta_road".into(), spec.beta_road),
        ("beta_ocean".into(), spec.beta_ocean),
        ("beta_airport".into(), spec.beta_airport),
        ("r".into(), spec.r),
        ("r_prime_urban".into(), spec.r_prime),
        ("r_prime_agri".into(), spec.r_prime_agri),
        ("b0_urban".into(), spec.b0),
        ("bq_urban".into(), spec.bq),
        ("b0_agri".into(), spec.b0_agri),
        ("bq_agri".into(), spec.bq_agri),
    ];
    for target in Target::ALL {
        let k = crate::downscaler::submodels(target).len();
        let mut w = vec![0.0; k];
        for (i, v) in &spec.omega[&target] {
            w[*i] += v;
        }
        truth.extend(w.iter().enumerate().map(|(i, v)| (format!("omega_{}_{i}", target.as_str()), *v)));
    }

    Ok(SyntheticWorld {
        cities,
        grid,
        countries,
        trade,
        observed,
        truth,
        history_years: years,
    })
}

pub fn write_truth(path: &Path, truth: &[(String, f64)]) -> Result<()> {
    let mut w = TableWriter::create(path, &["parameter", "value"])?;
    for (k, v) in truth {
        w.row(&[k.clone(), format_number(*v)])?;
    }
    w.finish()
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = crate::worldmodel::io::open_reader(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let (Some(k), Some(v)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::InvalidInput(format!("{}: malformed row", path.display())));
        };
        let v: f64 = v
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{}: bad value for {k}", path.display())))?;
        out.insert(k.to_owned(), v);
    }
    Ok(out)
}

/// Writes the input tables, the truth table and a matching `run.conf`
/// into `dir`. Returns the path of the run configuration.
pub fn write_world(world: &SyntheticWorld, spec: &SyntheticWorldSpec, dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cities(&dir.join("cities.csv"), &world.cities, &world.history_years)?;
    write_grid(&dir.join("grid.csv"), &world.grid)?;
    write_trade(&dir.join("trade.csv"), &world.trade)?;
    write_scenario(&dir.join("scenario.csv"), &world.countries)?;
    write_observed(&dir.join("observed.csv"), &world.grid, &world.observed)?;
    write_truth(&dir.join("truth.csv"), &world.truth)?;

    let template = format!(
        "cities = cities.csv\ngrid = grid.csv\ntrade = trade.csv\nscenario = scenario.csv\nobserved = observed.csv\ntruth = truth.csv\nbase_year = {}\nhorizon = {}\nstep = {}\nresolution = {}\nseed = {}\n",
        spec.base_year, spec.horizon, spec.step, spec.resolution, spec.seed
    );
    let cfg = RunConfig::parse(&template, dir, "run.conf")?;
    let path = dir.join("run.conf");
    std::fs::write(&path, cfg.render(dir)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
