//! Stage artifacts: file names, writers and readers.
//!
//! Grid tables are keyed by `grid_id` and must cover every cell; yearly
//! tables are written year by year in grid order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use csv::StringRecord;

use crate::citygrowth::{Coefficient, CityProjection, GrowthModelFit, GrowthParameters, RangeCandidate};
use crate::downscaler::{submodels, DownscaleEnsemble, Target};
use crate::potential::{AreaVariant, CalibrationCandidate, PotentialCalibration};
use crate::worldmodel::io::{format_number, open_reader, TableWriter};
use crate::worldmodel::{GridCell, Ssp, Year};
use crate::{Error, Result};

pub const FIT: &str = "fit.csv";
pub const FIT_META: &str = "fit_meta.csv";
pub const RANGE_SEARCH: &str = "range_search.csv";
pub const POTENTIAL_CALIBRATION: &str = "potential_calibration.csv";
pub const POTENTIAL_CANDIDATES: &str = "potential_candidates.csv";
pub const DOWNSCALED_CALIBRATION: &str = "downscaled_calibration.csv";

pub fn weights_file(target: Target) -> String {
    format!("weights_{}.csv", target.as_str())
}

pub fn trace_file(target: Target) -> String {
    format!("boosting_trace_{}.csv", target.as_str())
}

pub fn cities_file(ssp: Ssp) -> String {
    format!("cities_projected_{}.csv", ssp.as_str())
}

pub fn potential_file(variant: AreaVariant, ssp: Ssp, year: Year) -> String {
    match variant {
        AreaVariant::Urban => format!("potential_{}_{year}.csv", ssp.as_str()),
        AreaVariant::Agri => format!("potential_agri_{}_{year}.csv", ssp.as_str()),
    }
}

pub fn areas_file(ssp: Ssp) -> String {
    format!("areas_{}.csv", ssp.as_str())
}

pub fn capped_file(ssp: Ssp) -> String {
    format!("areas_capped_{}.csv", ssp.as_str())
}

pub fn downscaled_file(target: Target, ssp: Ssp) -> String {
    format!("downscaled_{}_{}.csv", target.as_str(), ssp.as_str())
}

pub fn importance_file(target: Target, ssp: Ssp, year: Year) -> String {
    format!("importance_{}_{}_{year}.csv", target.as_str(), ssp.as_str())
}

/// A CSV table read fully into memory with header lookup.
pub struct Table {
    path: PathBuf,
    header: StringRecord,
    pub rows: Vec<StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Missing(format!("artifact {} not found", path.display())));
        }
        let mut rdr = open_reader(path)?;
        let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let rows = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing column {name}", self.path.display())))
    }

    pub fn text<'a>(&self, row: &'a StringRecord, col: usize) -> Result<&'a str> {
        row.get(col)
            .ok_or_else(|| Error::InvalidInput(format!("{}: short row", self.path.display())))
    }

    pub fn number(&self, row: &StringRecord, col: usize) -> Result<f64> {
        let s = self.text(row, col)?;
        s.parse()
            .map_err(|_| Error::InvalidInput(format!("{}: `{s}` is not a number", self.path.display())))
    }

    pub fn year(&self, row: &StringRecord, col: usize) -> Result<Year> {
        let s = self.text(row, col)?;
        s.parse()
            .map_err(|_| Error::InvalidInput(format!("{}: `{s}` is not a year", self.path.display())))
    }
}

fn grid_positions(grid: &[GridCell]) -> HashMap<&str, usize> {
    grid.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), format_number)
}

/// Provenance record written next to each stage's outputs.
#[derive(Debug, Clone, Default)]
pub struct StageMeta {
    pub stage: String,
    pub config_hash: String,
    pub parameters: Vec<(String, String)>,
    pub deviations: Vec<String>,
    pub outputs: Vec<String>,
}

impl StageMeta {
    pub fn new(stage: &str, config_hash: &str) -> Self {
        Self {
            stage: stage.to_owned(),
            config_hash: config_hash.to_owned(),
            ..Default::default()
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.push((key.to_owned(), value.to_string()));
    }

    pub fn deviation(&mut self, text: &str) {
        self.deviations.push(text.to_owned());
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "stage = {}", self.stage).unwrap();
        writeln!(s, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(s, "config_sha256 = {}", self.config_hash).unwrap();
        for (k, v) in &self.parameters {
            writeln!(s, "param.{k} = {v}").unwrap();
        }
        for d in &self.deviations {
            writeln!(s, "deviation = {d}").unwrap();
        }
        for o in &self.outputs {
            writeln!(s, "output = {o}").unwrap();
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("{}.meta", self.stage));
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }
}

/// Growth-model estimate as consumed by the projection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FitArtifact {
    pub params: GrowthParameters,
    pub r: f64,
    pub cutoff: f64,
}

pub fn write_fit(dir: &Path, fit: &GrowthModelFit, estimation_year: Year, step: Year) -> Result<()> {
    let mut w = TableWriter::create(&dir.join(FIT), &["coefficient", "estimate", "std_error", "t_value"])?;
    for c in Coefficient::ALL {
        let e = &fit.estimates[&c];
        w.row(&[
            c.name().to_owned(),
            format_number(e.estimate),
            format_number(e.std_error),
            format_number(e.t_value),
        ])?;
    }
    w.finish()?;
    let mut w = TableWriter::create(&dir.join(FIT_META), &["key", "value"])?;
    let rows = [
        ("r", format_number(fit.r)),
        ("cutoff", format_number(fit.cutoff)),
        ("r2_delta", opt(fit.r2_delta)),
        ("r2_level", opt(fit.r2_level)),
        ("n", fit.n.to_string()),
        ("sigma2", format_number(fit.sigma2)),
        ("estimation_year", estimation_year.to_string()),
        ("step", step.to_string()),
    ];
    for (k, v) in rows {
        w.row(&[k.to_owned(), v])?;
    }
    w.finish()
}

pub fn read_fit(dir: &Path) -> Result<FitArtifact> {
    let t = Table::read(&dir.join(FIT))?;
    let (cc, ce) = (t.column("coefficient")?, t.column("estimate")?);
    let mut params = GrowthParameters::default();
    let mut seen = 0;
    for row in &t.rows {
        let c: Coefficient = t.text(row, cc)?.parse()?;
        params.set(c, t.number(row, ce)?);
        seen += 1;
    }
    if seen != Coefficient::ALL.len() {
        return Err(Error::InvalidInput(format!("{FIT}: expected {} coefficients", Coefficient::ALL.len())));
    }
    let meta = Table::read(&dir.join(FIT_META))?;
    let (mk, mv) = (meta.column("key")?, meta.column("value")?);
    let mut values = BTreeMap::new();
    for row in &meta.rows {
        values.insert(meta.text(row, mk)?.to_owned(), meta.text(row, mv)?.to_owned());
    }
    let get = |k: &str| -> Result<f64> {
        values
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("{FIT_META}: missing or bad {k}")))
    };
    Ok(FitArtifact {
        params,
        r: get("r")?,
        cutoff: get("cutoff")?,
    })
}

pub fn write_range_search(dir: &Path, candidates: &[RangeCandidate]) -> Result<()> {
    let mut w = TableWriter::create(&dir.join(RANGE_SEARCH), &["r", "r2_delta", "error"])?;
    for c in candidates {
        w.row(&[format_number(c.r), opt(c.r2_delta), c.error.clone().unwrap_or_default()])?;
    }
    w.finish()
}

pub fn write_potential_calibration(
    dir: &Path,
    calibrations: &[PotentialCalibration],
    candidates: &[(AreaVariant, Vec<CalibrationCandidate>)],
) -> Result<()> {
    let mut w = TableWriter::create(
        &dir.join(POTENTIAL_CALIBRATION),
        &["variant", "r_prime", "b0", "bq", "adj_r2", "cutoff_factor"],
    )?;
    for c in calibrations {
        w.row(&[
            c.variant.as_str().to_owned(),
            format_number(c.r_prime),
            format_number(c.b0),
            format_number(c.bq),
            format_number(c.adj_r2),
            format_number(c.cutoff_factor),
        ])?;
    }
    w.finish()?;
    let mut w = TableWriter::create(&dir.join(POTENTIAL_CANDIDATES), &["variant", "r_prime", "adj_r2"])?;
    for (variant, list) in candidates {
        for c in list {
            w.row(&[variant.as_str().to_owned(), format_number(c.r_prime), opt(c.adj_r2)])?;
        }
    }
    w.finish()
}

pub fn read_potential_calibration(dir: &Path) -> Result<BTreeMap<AreaVariant, PotentialCalibration>> {
    let t = Table::read(&dir.join(POTENTIAL_CALIBRATION))?;
    let cols = ["variant", "r_prime", "b0", "bq", "adj_r2", "cutoff_factor"]
        .map(|c| t.column(c))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for row in &t.rows {
        let variant: AreaVariant = t.text(row, cols[0])?.parse()?;
        out.insert(
            variant,
            PotentialCalibration {
                variant,
                r_prime: t.number(row, cols[1])?,
                b0: t.number(row, cols[2])?,
                bq: t.number(row, cols[3])?,
                adj_r2: t.number(row, cols[4])?,
                cutoff_factor: t.number(row, cols[5])?,
            },
        );
    }
    for v in [AreaVariant::Urban, AreaVariant::Agri] {
        if !out.contains_key(&v) {
            return Err(Error::Missing(format!("{POTENTIAL_CALIBRATION}: no {v} row")));
        }
    }
    Ok(out)
}

pub fn write_weights(dir: &Path, ensemble: &DownscaleEnsemble) -> Result<()> {
    let mut w = TableWriter::create(&dir.join(weights_file(ensemble.target)), &["k", "offset", "control", "omega"])?;
    for (sub, omega) in ensemble.submodels.iter().zip(&ensemble.weights) {
        w.row(&[
            sub.index.to_string(),
            sub.offset.as_str().to_owned(),
            sub.control.as_str().to_owned(),
            format_number(*omega),
        ])?;
    }
    w.finish()?;
    let mut w = TableWriter::create(&dir.join(trace_file(ensemble.target)), &["iteration", "loss", "chosen"])?;
    for (i, loss) in ensemble.trace.iter().enumerate() {
        let chosen = if i == 0 {
            String::new()
        } else {
            ensemble.chosen[i - 1].map_or_else(String::new, |k| k.to_string())
        };
        w.row(&[i.to_string(), format_number(*loss), chosen])?;
    }
    w.finish()
}

/// Reads fitted weights back; the boosting trace is not restored.
pub fn read_weights(dir: &Path, target: Target) -> Result<DownscaleEnsemble> {
    let path = dir.join(weights_file(target));
    let t = Table::read(&path)?;
    let (ck, co) = (t.column("k")?, t.column("omega")?);
    let subs = submodels(target);
    let mut weights = vec![f64::NAN; subs.len()];
    for row in &t.rows {
        let k: usize = t
            .text(row, ck)?
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{}: bad sub-model index", path.display())))?;
        if k >= subs.len() {
            return Err(Error::InvalidInput(format!("{}: sub-model {k} out of range", path.display())));
        }
        weights[k] = t.number(row, co)?;
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput(format!("{}: incomplete or negative weights", path.display())));
    }
    Ok(DownscaleEnsemble {
        target,
        submodels: subs,
        raw: weights.clone(),
        weights,
        trace: Vec::new(),
        chosen: Vec::new(),
    })
}

pub fn write_city_projection(path: &Path, proj: &CityProjection) -> Result<()> {
    let mut w = TableWriter::create(path, &["id", "year", "pop"])?;
    for (i, id) in proj.ids.iter().enumerate() {
        for (k, year) in proj.years.iter().enumerate() {
            w.row(&[id.clone(), year.to_string(), format_number(proj.pops[k][i])])?;
        }
    }
    w.finish()
}

pub fn read_city_projection(path: &Path) -> Result<CityProjection> {
    let t = Table::read(path)?;
    let (ci, cy, cp) = (t.column("id")?, t.column("year")?, t.column("pop")?);
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut by_year: BTreeMap<Year, Vec<(usize, f64)>> = BTreeMap::new();
    for row in &t.rows {
        let id = t.text(row, ci)?;
        let i = *index.entry(id.to_owned()).or_insert_with(|| {
            ids.push(id.to_owned());
            ids.len() - 1
        });
        by_year.entry(t.year(row, cy)?).or_default().push((i, t.number(row, cp)?));
    }
    let years: Vec<Year> = by_year.keys().copied().collect();
    let mut pops = Vec::with_capacity(years.len());
    for (year, entries) in by_year {
        let mut v = vec![f64::NAN; ids.len()];
        for (i, p) in entries {
            v[i] = p;
        }
        if v.iter().any(|p| p.is_nan()) {
            return Err(Error::InvalidInput(format!("{}: incomplete year {year}", path.display())));
        }
        pops.push(v);
    }
    Ok(CityProjection { ids, years, pops })
}

/// One value per grid cell: `grid_id, <column>`.
pub fn write_grid_values(path: &Path, grid: &[GridCell], column: &str, values: &[f64]) -> Result<()> {
    let mut w = TableWriter::create(path, &["grid_id", column])?;
    for (cell, v) in grid.iter().zip(values) {
        w.row(&[cell.id.clone(), format_number(*v)])?;
    }
    w.finish()
}

pub fn read_grid_values(path: &Path, grid: &[GridCell], column: &str) -> Result<Vec<f64>> {
    let t = Table::read(path)?;
    let (cg, cv) = (t.column("grid_id")?, t.column(column)?);
    let pos = grid_positions(grid);
    let mut out = vec![f64::NAN; grid.len()];
    for row in &t.rows {
        let id = t.text(row, cg)?;
        let g = *pos
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("{}: unknown grid id {id}", path.display())))?;
        out[g] = t.number(row, cv)?;
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!("{}: does not cover the grid", path.display())));
    }
    Ok(out)
}

/// Yearly grid table with the given value columns; `values[c][k][g]` is
/// column `c`, year `years[k]`, cell `g`.
pub fn write_yearly(
    path: &Path,
    grid: &[GridCell],
    years: &[Year],
    columns: &[&str],
    values: &[&[Vec<f64>]],
) -> Result<()> {
    let mut header = vec!["grid_id", "year"];
    header.extend_from_slice(columns);
    let mut w = TableWriter::create(path, &header)?;
    for (k, year) in years.iter().enumerate() {
        for (g, cell) in grid.iter().enumerate() {
            let mut row = vec![cell.id.clone(), year.to_string()];
            row.extend(values.iter().map(|col| format_number(col[k][g])));
            w.row(&row)?;
        }
    }
    w.finish()
}

/// Reads a yearly grid table; returns the years and, per column, one
/// vector per year.
pub fn read_yearly(path: &Path, grid: &[GridCell], columns: &[&str]) -> Result<(Vec<Year>, Vec<Vec<Vec<f64>>>)> {
    let t = Table::read(path)?;
    let (cg, cy) = (t.column("grid_id")?, t.column("year")?);
    let cols = columns.iter().map(|c| t.column(c)).collect::<Result<Vec<_>>>()?;
    let pos = grid_positions(grid);
    let mut by_year: BTreeMap<Year, Vec<Vec<f64>>> = BTreeMap::new();
    for row in &t.rows {
        let id = t.text(row, cg)?;
        let g = *pos
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("{}: unknown grid id {id}", path.display())))?;
        let slot = by_year
            .entry(t.year(row, cy)?)
            .or_insert_with(|| vec![vec![f64::NAN; grid.len()]; cols.len()]);
        for (c, &col) in cols.iter().enumerate() {
            slot[c][g] = t.number(row, col)?;
        }
    }
    let years: Vec<Year> = by_year.keys().copied().collect();
    let mut out = vec![Vec::with_capacity(years.len()); cols.len()];
    for (year, per_col) in by_year {
        for (c, v) in per_col.into_iter().enumerate() {
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::InvalidInput(format!(
                    "{}: year {year} does not cover the grid",
                    path.display()
                )));
            }
            out[c].push(v);
        }
    }
    Ok((years, out))
}

pub fn write_capped(path: &Path, grid: &[GridCell], capped: &[(Year, usize)]) -> Result<()> {
    let mut w = TableWriter::create(path, &["grid_id", "year"])?;
    for (year, g) in capped {
        w.row(&[grid[*g].id.clone(), year.to_string()])?;
    }
    w.finish()
}
