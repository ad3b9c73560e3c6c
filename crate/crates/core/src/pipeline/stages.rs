//! The six pipeline stages. Each stage loads the input tables and the
//! artifacts of earlier stages from disk, writes its own artifacts and a
//! `<stage>.meta` provenance file.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;

use super::artifacts::{self as art, StageMeta};
use super::config::RunConfig;
use super::validate::{self, ValidationReport};
use crate::citygrowth::{assemble_design, project_cities, search_range, CityPanel, CityProjection, SpatialWeights};
use crate::downscaler::{
    combine, downscale_gdp_chain, grid_city_population, importance_shares, submodel_fields, fit_weights,
    CountryCells, DownscaleEnsemble, Target, YearInputs,
};
use crate::expansion::{project_areas, AreaInputs, PotentialSeries};
use crate::potential::{calibrate, default_r_prime_grid, scenario_range, AreaVariant, KernelSupport};
use crate::worldmodel::io::{format_number, read_cities, read_grid, read_observed, read_scenario, read_trade, TableWriter};
use crate::worldmodel::{LonLat, ObservedGrid, ScenarioConfig, Ssp, World, Year};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Calibrate,
    ProjectCities,
    Potentials,
    Areas,
    Downscale,
    Validate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Calibrate,
        Stage::ProjectCities,
        Stage::Potentials,
        Stage::Areas,
        Stage::Downscale,
        Stage::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Calibrate => "calibrate",
            Stage::ProjectCities => "project-cities",
            Stage::Potentials => "potentials",
            Stage::Areas => "areas",
            Stage::Downscale => "downscale",
            Stage::Validate => "validate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Input tables loaded and validated for one stage.
pub struct Inputs<'a> {
    pub cfg: &'a RunConfig,
    pub world: World,
    pub city_cells: Vec<Option<usize>>,
    pub countries: CountryCells,
}

impl<'a> Inputs<'a> {
    pub fn load(cfg: &'a RunConfig) -> Result<Self> {
        let cities = read_cities(&cfg.cities)?;
        let grid = read_grid(&cfg.grid)?;
        let trade = read_trade(&cfg.trade)?;
        let countries = read_scenario(&cfg.scenario)?;
        let (world, _) = World::new(cities, grid, countries, trade, cfg.resolution)?;
        let city_cells = world.city_cells();
        let countries = world.cells_by_country();
        Ok(Self {
            cfg,
            world,
            city_cells,
            countries,
        })
    }

    fn centers(&self) -> Vec<LonLat> {
        self.world.grid.iter().map(|g| g.center).collect()
    }

    /// Cities with populations at the base year and one step before.
    fn base_panel(&self) -> Result<CityPanel> {
        let cfg = self.cfg;
        let panel = CityPanel::assemble(
            &self.world.cities,
            &self.world.grid,
            &self.city_cells,
            cfg.base_year,
            cfg.step,
            &[],
        )?;
        if panel.is_empty() {
            return Err(Error::Missing(format!(
                "no city has populations for {} and {}",
                cfg.base_year - cfg.step,
                cfg.base_year
            )));
        }
        Ok(panel)
    }

    /// Containing cell of each panel city.
    fn panel_cells(&self, panel: &CityPanel) -> Vec<Option<usize>> {
        panel.cities.iter().map(|&i| self.city_cells[i]).collect()
    }

    fn observed(&self) -> Result<ObservedGrid> {
        let obs = read_observed(&self.cfg.observed, &self.world.grid)?;
        if obs.year != self.cfg.base_year {
            return Err(Error::Config(format!(
                "reference grid is for {}, expected the base year {}",
                obs.year, self.cfg.base_year
            )));
        }
        Ok(obs)
    }

    /// Country totals of one target from the scenario table.
    fn scenario_totals(&self, ssp: Ssp, year: Year, target: Target) -> Result<BTreeMap<String, f64>> {
        self.countries
            .keys()
            .map(|code| {
                let v = self
                    .world
                    .countries
                    .get(code)
                    .and_then(|c| c.values(ssp, year))
                    .ok_or_else(|| Error::Missing(format!("{ssp} scenario values for {code} in {year}")))?;
                Ok((code.clone(), target_value(target, &v)))
            })
            .collect()
    }

    fn projection_positions(&self, proj: &CityProjection) -> Result<(Vec<LonLat>, Vec<Option<usize>>)> {
        let index: HashMap<&str, usize> =
            self.world.cities.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
        let mut positions = Vec::with_capacity(proj.ids.len());
        let mut cells = Vec::with_capacity(proj.ids.len());
        for id in &proj.ids {
            let i = *index
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("projected city {id} is not in the city table")))?;
            positions.push(self.world.cities[i].location);
            cells.push(self.city_cells[i]);
        }
        Ok((positions, cells))
    }
}

pub fn target_value(target: Target, v: &crate::worldmodel::ScenarioValues) -> f64 {
    match target {
        Target::UrbanPop => v.urban_pop,
        Target::NonurbanPop => v.nonurban_pop,
        Target::Gdp => v.gdp,
    }
}

fn observed_values(obs: &ObservedGrid, target: Target) -> Vec<f64> {
    obs.values.iter().map(|v| target_value(target, v)).collect()
}

fn country_sums(countries: &CountryCells, values: &[f64]) -> BTreeMap<String, f64> {
    countries
        .iter()
        .map(|(code, cells)| (code.clone(), cells.iter().map(|&g| values[g]).sum()))
        .collect()
}

fn check_years(found: &[Year], cfg: &RunConfig, what: &str) -> Result<()> {
    if found != cfg.years() {
        return Err(Error::InvalidInput(format!(
            "{what} covers years {:?}, expected {}..={} by {}",
            found, cfg.base_year, cfg.horizon, cfg.step
        )));
    }
    Ok(())
}

fn write_meta(out: &Path, meta: &StageMeta) -> Result<()> {
    meta.write(out)
}

/// Estimates the growth model and its range, calibrates the potential
/// response of both area variants and fits the downscaling weights.
pub fn calibrate_stage(inp: &Inputs<'_>, out: &Path) -> Result<()> {
    let cfg = inp.cfg;
    let w = &inp.world;
    let mut meta = StageMeta::new(Stage::Calibrate.name(), &cfg.hash);

    let t = cfg.estimation_year();
    let design = assemble_design(&w.cities, &w.grid, &inp.city_cells, t, cfg.step)?;
    let search = search_range(&design, &w.trade, &cfg.r_grid, cfg.geo_cutoff_factor)?;
    let fit = &search.best;
    info!("growth model: r = {} km, n = {}", fit.r, fit.n);
    art::write_fit(out, fit, t, cfg.step)?;
    art::write_range_search(out, &search.candidates)?;
    meta.param("estimation_year", t);
    meta.param("step", cfg.step);
    meta.param("r", format_number(fit.r));
    meta.param("geo_cutoff", format_number(fit.cutoff));
    meta.param("n_cities", fit.n);
    meta.deviation(&format!(
        "distance kernel truncated at {} x r",
        format_number(cfg.geo_cutoff_factor)
    ));
    meta.deviation("lagged growth enters as the growth over the step before the estimation year");
    meta.deviation("range candidates are estimated one at a time");
    for f in [art::FIT, art::FIT_META, art::RANGE_SEARCH] {
        meta.output(f);
    }
    if cfg.dump_matrices {
        let weights = SpatialWeights::for_panel(&design.panel, &w.trade, fit.r, fit.cutoff)?;
        for (name, m) in [("w_geo.csv", &weights.geo), ("w_e1.csv", &weights.e1), ("w_e2.csv", &weights.e2)] {
            m.write_triplets(&out.join(name), &design.panel.ids)?;
            meta.output(name);
        }
    }

    // Potential response at the base year.
    let panel = inp.base_panel()?;
    let r_grid = cfg.r_prime_grid.clone().unwrap_or_else(|| default_r_prime_grid(fit.r));
    let r_max = r_grid.iter().copied().fold(0.0, f64::max);
    let pcf = cfg.potential_cutoff_factor;
    let support = KernelSupport::build(&panel.positions, &inp.centers(), pcf * r_max)?;
    let urban_area: Vec<f64> = w.grid.iter().map(|g| g.urban_area).collect();
    let agri_area: Vec<f64> = w.grid.iter().map(|g| g.agri_area).collect();
    let (cal_u, cand_u) = calibrate(&urban_area, &support, &panel.pop, AreaVariant::Urban, &r_grid, pcf)?;
    let (cal_a, cand_a) = calibrate(&agri_area, &support, &panel.pop, AreaVariant::Agri, &r_grid, pcf)?;
    art::write_potential_calibration(
        out,
        &[cal_u, cal_a],
        &[(AreaVariant::Urban, cand_u), (AreaVariant::Agri, cand_a)],
    )?;
    meta.param("r_prime_urban", format_number(cal_u.r_prime));
    meta.param("r_prime_agri", format_number(cal_a.r_prime));
    meta.deviation(&format!("potential kernel truncated at {} x r'", format_number(pcf)));
    meta.output(art::POTENTIAL_CALIBRATION);
    meta.output(art::POTENTIAL_CANDIDATES);

    // Downscaling weights against the base-year reference grid.
    let obs = inp.observed()?;
    let q = support.field(&panel.pop, cal_u.r_prime, pcf * cal_u.r_prime)?;
    let city_grid = grid_city_population(w.grid.len(), &inp.panel_cells(&panel), &panel.pop);
    let mut inputs = YearInputs {
        urban_area: &urban_area,
        agri_area: &agri_area,
        urban_pop_grid: &city_grid,
        potential: &q,
        ssp_pop: None,
    };
    let fit_target = |target: Target, inputs: &YearInputs<'_>| -> Result<(DownscaleEnsemble, Vec<f64>)> {
        let observed = observed_values(&obs, target);
        let totals = country_sums(&inp.countries, &observed);
        let fields = submodel_fields(target, &w.grid, &inp.countries, inputs, &totals)?;
        let ens = fit_weights(target, &fields, &observed, cfg.boosting)?;
        let values = combine(&ens.weights, &fields)?;
        Ok((ens, values))
    };
    let (urban_ens, urban_fit) = fit_target(Target::UrbanPop, &inputs)?;
    let (nonurban_ens, nonurban_fit) = fit_target(Target::NonurbanPop, &inputs)?;
    let pop: Vec<f64> = urban_fit.iter().zip(&nonurban_fit).map(|(a, b)| a + b).collect();
    inputs.ssp_pop = Some(&pop);
    let (gdp_ens, gdp_fit) = fit_target(Target::Gdp, &inputs)?;
    let ensembles = [urban_ens, nonurban_ens, gdp_ens];
    let fitted: BTreeMap<Target, Vec<f64>> =
        [(Target::UrbanPop, urban_fit), (Target::NonurbanPop, nonurban_fit), (Target::Gdp, gdp_fit)].into();
    for ens in &ensembles {
        art::write_weights(out, ens)?;
        meta.output(art::weights_file(ens.target));
        meta.output(art::trace_file(ens.target));
    }
    let mut wtr = TableWriter::create(
        &out.join(art::DOWNSCALED_CALIBRATION),
        &["grid_id", "target", "observed", "fitted"],
    )?;
    for target in Target::ALL {
        let observed = observed_values(&obs, target);
        for (g, cell) in w.grid.iter().enumerate() {
            wtr.row(&[
                cell.id.clone(),
                target.as_str().to_owned(),
                format_number(observed[g]),
                format_number(fitted[&target][g]),
            ])?;
        }
    }
    wtr.finish()?;
    meta.output(art::DOWNSCALED_CALIBRATION);
    meta.param("learning_rate", cfg.boosting.learning_rate);
    meta.param("iterations", cfg.boosting.iterations);
    meta.deviation("weights fitted at grid level against the base-year reference grid");
    meta.deviation("boosting steps may be negative; negative accumulated coefficients are clipped by the simplex projection");
    meta.deviation("GDP population offset at fit time is the fitted base-year population");
    meta.deviation("distance controls enter as 1 / (1 + distance)");
    write_meta(out, &meta)
}

/// Projects city populations for every scenario.
pub fn project_cities_stage(inp: &Inputs<'_>, out: &Path) -> Result<()> {
    let cfg = inp.cfg;
    let fit = art::read_fit(out)?;
    let panel = inp.base_panel()?;
    let weights = SpatialWeights::for_panel(&panel, &inp.world.trade, fit.r, fit.cutoff)?;
    let mut meta = StageMeta::new(Stage::ProjectCities.name(), &cfg.hash);
    meta.param("r", format_number(fit.r));
    meta.param("geo_cutoff", format_number(fit.cutoff));
    meta.param("n_cities", panel.len());
    meta.param("dropped_cities", panel.dropped.len());
    meta.deviation("lag-forward recursion: each step uses the previous step's predicted growth as the spatial lag");
    meta.deviation("connectivity fixed at base-year populations");
    for &ssp in &cfg.scenarios {
        let scenario = ScenarioConfig::new(ssp, cfg.base_year, cfg.horizon, cfg.step)?;
        let proj = project_cities(&fit.params, &panel, &weights, &scenario)?;
        let name = art::cities_file(ssp);
        art::write_city_projection(&out.join(&name), &proj)?;
        meta.output(name);
    }
    write_meta(out, &meta)
}

fn read_projection(inp: &Inputs<'_>, out: &Path, ssp: Ssp) -> Result<CityProjection> {
    let proj = art::read_city_projection(&out.join(art::cities_file(ssp)))?;
    check_years(&proj.years, inp.cfg, &art::cities_file(ssp))?;
    Ok(proj)
}

/// Urban and agricultural potentials for every scenario and year.
pub fn potentials_stage(inp: &Inputs<'_>, out: &Path) -> Result<()> {
    let cfg = inp.cfg;
    let cal = art::read_potential_calibration(out)?;
    let centers = inp.centers();
    let mut meta = StageMeta::new(Stage::Potentials.name(), &cfg.hash);
    meta.deviation(&format!(
        "potential kernel truncated at {} x r'",
        format_number(cfg.potential_cutoff_factor)
    ));
    for &ssp in &cfg.scenarios {
        let proj = read_projection(inp, out, ssp)?;
        let (positions, _) = inp.projection_positions(&proj)?;
        for variant in [AreaVariant::Urban, AreaVariant::Agri] {
            let c = &cal[&variant];
            let r_prime = scenario_range(c, ssp);
            let cutoff = c.cutoff_factor * r_prime;
            meta.param(&format!("r_prime_{}_{}", variant.as_str(), ssp.as_str()), format_number(r_prime));
            let support = KernelSupport::build(&positions, &centers, cutoff)?;
            for (k, &year) in proj.years.iter().enumerate() {
                let q = support.field(&proj.pops[k], r_prime, cutoff)?;
                let name = art::potential_file(variant, ssp, year);
                art::write_grid_values(&out.join(&name), &inp.world.grid, "q", &q)?;
                meta.output(name);
            }
        }
    }
    write_meta(out, &meta)
}

fn read_potentials(inp: &Inputs<'_>, out: &Path, variant: AreaVariant, ssp: Ssp) -> Result<PotentialSeries> {
    inp.cfg
        .years()
        .into_iter()
        .map(|year| {
            let path = out.join(art::potential_file(variant, ssp, year));
            Ok((year, art::read_grid_values(&path, &inp.world.grid, "q")?))
        })
        .collect()
}

/// Urban and agricultural area trajectories.
pub fn areas_stage(inp: &Inputs<'_>, out: &Path) -> Result<()> {
    let cfg = inp.cfg;
    let cal = art::read_potential_calibration(out)?;
    let grid = &inp.world.grid;
    let cell_area: Vec<f64> = grid.iter().map(|g| g.cell_area).collect();
    let urban: Vec<f64> = grid.iter().map(|g| g.urban_area).collect();
    let agri: Vec<f64> = grid.iter().map(|g| g.agri_area).collect();
    let area_inputs = AreaInputs {
        cell_area: &cell_area,
        urban: &urban,
        agri: &agri,
        bq_urban: cal[&AreaVariant::Urban].bq,
        bq_agri: cal[&AreaVariant::Agri].bq,
    };
    let mut meta = StageMeta::new(Stage::Areas.name(), &cfg.hash);
    meta.param("bq_urban", format_number(area_inputs.bq_urban));
    meta.param("bq_agri", format_number(area_inputs.bq_agri));
    meta.deviation("areas floored at zero");
    meta.deviation("capacity rule: urban capped at the cell area first, agricultural area takes the remainder");
    for &ssp in &cfg.scenarios {
        let uq = read_potentials(inp, out, AreaVariant::Urban, ssp)?;
        let aq = read_potentials(inp, out, AreaVariant::Agri, ssp)?;
        let traj = project_areas(area_inputs, &uq, &aq, &cfg.years())?;
        let name = art::areas_file(ssp);
        art::write_yearly(
            &out.join(&name),
            grid,
            &traj.years,
            &["urban_area", "agri_area"],
            &[&traj.urban, &traj.agri],
        )?;
        meta.output(name);
        let name = art::capped_file(ssp);
        art::write_capped(&out.join(&name), grid, &traj.urban_capped)?;
        meta.param(&format!("capped_cells_{}", ssp.as_str()), traj.urban_capped.len());
        meta.output(name);
    }
    write_meta(out, &meta)
}

fn write_importance(path: &Path, ens: &DownscaleEnsemble, shares: &[f64]) -> Result<()> {
    let mut w = TableWriter::create(path, &["k", "offset", "control", "omega", "share"])?;
    for ((sub, omega), share) in ens.submodels.iter().zip(&ens.weights).zip(shares) {
        w.row(&[
            sub.index.to_string(),
            sub.offset.as_str().to_owned(),
            sub.control.as_str().to_owned(),
            format_number(*omega),
            format_number(*share),
        ])?;
    }
    w.finish()
}

/// Gridded urban population, non-urban population and GDP.
pub fn downscale_stage(inp: &Inputs<'_>, out: &Path) -> Result<()> {
    let cfg = inp.cfg;
    let grid = &inp.world.grid;
    let ensembles: BTreeMap<Target, DownscaleEnsemble> = Target::ALL
        .into_iter()
        .map(|t| Ok((t, art::read_weights(out, t)?)))
        .collect::<Result<_>>()?;
    let mut meta = StageMeta::new(Stage::Downscale.name(), &cfg.hash);
    for ens in ensembles.values() {
        let w: Vec<String> = ens.weights.iter().map(|v| format_number(*v)).collect();
        meta.param(&format!("omega_{}", ens.target.as_str()), w.join(","));
    }
    meta.deviation("weights fixed at base-year values; per-year importance shares reweight them by field mass");
    meta.deviation("urban potential offset uses the scenario-scaled range");

    for &ssp in &cfg.scenarios {
        inp.world.check_scenario_coverage(ssp, cfg.base_year, cfg.horizon, cfg.step)?;
        let proj = read_projection(inp, out, ssp)?;
        let (_, cells) = inp.projection_positions(&proj)?;
        let (years, areas) = art::read_yearly(&out.join(art::areas_file(ssp)), grid, &["urban_area", "agri_area"])?;
        check_years(&years, cfg, &art::areas_file(ssp))?;
        let potentials = read_potentials(inp, out, AreaVariant::Urban, ssp)?;
        let mut results: BTreeMap<Target, Vec<Vec<f64>>> = BTreeMap::new();
        for (k, &year) in years.iter().enumerate() {
            let city_grid = grid_city_population(grid.len(), &cells, &proj.pops[k]);
            let inputs = YearInputs {
                urban_area: &areas[0][k],
                agri_area: &areas[1][k],
                urban_pop_grid: &city_grid,
                potential: &potentials[&year],
                ssp_pop: None,
            };
            let mut year_values: BTreeMap<Target, Vec<f64>> = BTreeMap::new();
            for target in [Target::UrbanPop, Target::NonurbanPop] {
                let totals = inp.scenario_totals(ssp, year, target)?;
                let fields = submodel_fields(target, grid, &inp.countries, &inputs, &totals)?;
                let ens = &ensembles[&target];
                let shares = importance_shares(&ens.weights, &fields);
                let name = art::importance_file(target, ssp, year);
                write_importance(&out.join(&name), ens, &shares)?;
                meta.output(name);
                year_values.insert(target, combine(&ens.weights, &fields)?);
            }
            let gdp_totals = inp.scenario_totals(ssp, year, Target::Gdp)?;
            let gdp = &ensembles[&Target::Gdp];
            let pop: Vec<f64> = year_values[&Target::UrbanPop]
                .iter()
                .zip(&year_values[&Target::NonurbanPop])
                .map(|(a, b)| a + b)
                .collect();
            let chained = YearInputs {
                ssp_pop: Some(&pop),
                ..inputs
            };
            let fields = submodel_fields(Target::Gdp, grid, &inp.countries, &chained, &gdp_totals)?;
            let name = art::importance_file(Target::Gdp, ssp, year);
            write_importance(&out.join(&name), gdp, &importance_shares(&gdp.weights, &fields))?;
            meta.output(name);
            let gdp_values = downscale_gdp_chain(
                gdp,
                grid,
                &inp.countries,
                &inputs,
                year_values.get(&Target::UrbanPop).map(Vec::as_slice),
                year_values.get(&Target::NonurbanPop).map(Vec::as_slice),
                &gdp_totals,
            )?;
            year_values.insert(Target::Gdp, gdp_values);
            for (t, v) in year_values {
                results.entry(t).or_default().push(v);
            }
        }
        for target in Target::ALL {
            let name = art::downscaled_file(target, ssp);
            art::write_yearly(&out.join(&name), grid, &years, &["value"], &[&results[&target]])?;
            meta.output(name);
        }
    }
    write_meta(out, &meta)
}

/// Validation metrics; see [`validate::validate_outputs`].
pub fn validate_stage(inp: &Inputs<'_>, out: &Path) -> Result<ValidationReport> {
    let report = validate::validate_outputs(inp, out)?;
    let mut meta = StageMeta::new(Stage::Validate.name(), &inp.cfg.hash);
    meta.param("checks", report.checks.len());
    meta.param("failed", report.checks.iter().filter(|c| !c.passed).count());
    meta.deviation("scatter statistics use cells where both values are positive, in log space");
    for f in &report.outputs {
        meta.output(f.clone());
    }
    write_meta(out, &meta)?;
    Ok(report)
}
