//! CSV readers and writers for the input tables.
//!
//! All tables are comma separated with a header row. Numbers are written
//! with 12 significant digits and LF line endings so that reruns are
//! byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::StringRecord;
use serde::Deserialize;

use super::{City, Country, GridCell, LonLat, ObservedGrid, ScenarioValues, Ssp, TradeTable, Year};
use crate::{Error, Result};

/// Formats `x` with 12 significant digits.
///
/// Plain decimal notation for magnitudes in `[1e-6, 1e15)`, scientific
/// otherwise. Trailing zeros are trimmed; `-0` prints as `0`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs();
    if !(1e-6..1e15).contains(&mag) {
        return format!("{x:.11e}");
    }
    let exponent = mag.log10().floor() as i32;
    let decimals = (11 - exponent).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    // Rounding may carry into a new leading digit (9.99.. -> 10.0); that
    // only adds a trailing digit which trimming handles.
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_owned();
    }
    s
}

/// Line-oriented CSV writer with fixed column order.
pub struct TableWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl TableWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_owned(),
        };
        w.raw_row(header.iter().copied())?;
        Ok(w)
    }

    fn raw_row<'a>(&mut self, cells: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut first = true;
        for c in cells {
            if !first {
                self.out.write_all(b",").map_err(|e| Error::io(&self.path, e))?;
            }
            first = false;
            if c.contains([',', '"', '\n']) {
                let quoted = format!("\"{}\"", c.replace('"', "\"\""));
                self.out.write_all(quoted.as_bytes())
            } else {
                self.out.write_all(c.as_bytes())
            }
            .map_err(|e| Error::io(&self.path, e))?;
        }
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        self.raw_row(cells.iter().map(String::as_str))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub(crate) fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

fn parse_f64(path: &Path, field: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| {
        Error::InvalidInput(format!("{}: cannot parse {field} value `{raw}`", path.display()))
    })
}

fn column(headers: &StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidInput(format!("{}: missing column `{name}`", path.display())))
}

/// Reads `cities.csv`: `id,lon,lat,country,pop<year>...`. Any number of
/// `pop<year>` columns is accepted; empty cells mean "no observation".
pub fn read_cities(path: &Path) -> Result<Vec<City>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let id = column(&headers, "id", path)?;
    let lon = column(&headers, "lon", path)?;
    let lat = column(&headers, "lat", path)?;
    let country = column(&headers, "country", path)?;
    let pop_cols: Vec<(usize, Year)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("pop").and_then(|y| y.parse().ok()).map(|y| (i, y)))
        .collect();
    if pop_cols.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no pop<year> columns", path.display())));
    }

    let mut cities = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let mut pop = BTreeMap::new();
        for &(i, year) in &pop_cols {
            let raw = &rec[i];
            if !raw.is_empty() {
                pop.insert(year, parse_f64(path, "pop", raw)?);
            }
        }
        cities.push(City {
            id: rec[id].to_owned(),
            location: LonLat::new(parse_f64(path, "lon", &rec[lon])?, parse_f64(path, "lat", &rec[lat])?),
            country: rec[country].to_owned(),
            pop,
        });
    }
    Ok(cities)
}

pub fn write_cities(path: &Path, cities: &[City], years: &[Year]) -> Result<()> {
    let mut header = vec!["id".to_owned(), "lon".into(), "lat".into(), "country".into()];
    header.extend(years.iter().map(|y| format!("pop{y}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = TableWriter::create(path, &header_refs)?;
    for c in cities {
        let mut row = vec![
            c.id.clone(),
            format_number(c.location.lon),
            format_number(c.location.lat),
            c.country.clone(),
        ];
        row.extend(years.iter().map(|y| c.pop_at(*y).map(format_number).unwrap_or_default()));
        w.row(&row)?;
    }
    w.finish()
}

#[derive(Debug, Deserialize)]
struct GridRecord {
    id: String,
    lon: f64,
    lat: f64,
    country: String,
    cell_area: f64,
    urban_area: f64,
    agri_area: f64,
    road_dens: f64,
    airport_dist: f64,
    ocean_dist: f64,
}

/// Reads `grid.csv`.
pub fn read_grid(path: &Path) -> Result<Vec<GridCell>> {
    let mut rdr = open_reader(path)?;
    rdr.deserialize::<GridRecord>()
        .map(|r| {
            let r = r.map_err(|e| Error::csv(path, e))?;
            Ok(GridCell {
                id: r.id,
                center: LonLat::new(r.lon, r.lat),
                country: r.country,
                cell_area: r.cell_area,
                urban_area: r.urban_area,
                agri_area: r.agri_area,
                road_dens: r.road_dens,
                airport_dist: r.airport_dist,
                ocean_dist: r.ocean_dist,
            })
        })
        .collect()
}

pub fn write_grid(path: &Path, grid: &[GridCell]) -> Result<()> {
    let mut w = TableWriter::create(
        path,
        &[
            "id",
            "lon",
            "lat",
            "country",
            "cell_area",
            "urban_area",
            "agri_area",
            "road_dens",
            "airport_dist",
            "ocean_dist",
        ],
    )?;
    for g in grid {
        w.row(&[
            g.id.clone(),
            format_number(g.center.lon),
            format_number(g.center.lat),
            g.country.clone(),
            format_number(g.cell_area),
            format_number(g.urban_area),
            format_number(g.agri_area),
            format_number(g.road_dens),
            format_number(g.airport_dist),
            format_number(g.ocean_dist),
        ])?;
    }
    w.finish()
}

#[derive(Debug, Deserialize)]
struct TradeRecord {
    country_a: String,
    country_b: String,
    amount: f64,
}

/// Reads `trade.csv`. Repeated pairs (in either order) are summed.
pub fn read_trade(path: &Path) -> Result<TradeTable> {
    let mut rdr = open_reader(path)?;
    let mut table = TradeTable::new();
    for r in rdr.deserialize::<TradeRecord>() {
        let r = r.map_err(|e| Error::csv(path, e))?;
        table.insert(&r.country_a, &r.country_b, r.amount)?;
    }
    Ok(table)
}

pub fn write_trade(path: &Path, trade: &TradeTable) -> Result<()> {
    let mut w = TableWriter::create(path, &["country_a", "country_b", "amount"])?;
    for (a, b, v) in trade.iter() {
        w.row(&[a.to_owned(), b.to_owned(), format_number(v)])?;
    }
    w.finish()
}

#[derive(Debug, Deserialize)]
struct ScenarioRecord {
    ssp: String,
    country: String,
    year: Year,
    urban_pop: f64,
    nonurban_pop: f64,
    gdp: f64,
}

/// Reads `scenario.csv` into the country table.
pub fn read_scenario(path: &Path) -> Result<BTreeMap<String, Country>> {
    let mut rdr = open_reader(path)?;
    let mut countries: BTreeMap<String, Country> = BTreeMap::new();
    for r in rdr.deserialize::<ScenarioRecord>() {
        let r = r.map_err(|e| Error::csv(path, e))?;
        let ssp: Ssp = r.ssp.parse()?;
        if r.year % 5 != 0 {
            return Err(Error::InvalidInput(format!(
                "{}: year {} is not on the 5-year grid",
                path.display(),
                r.year
            )));
        }
        let country = countries.entry(r.country.clone()).or_insert_with(|| Country {
            code: r.country.clone(),
            ..Default::default()
        });
        country.scenario_series.entry(ssp).or_default().insert(
            r.year,
            ScenarioValues {
                urban_pop: r.urban_pop,
                nonurban_pop: r.nonurban_pop,
                gdp: r.gdp,
            },
        );
    }
    Ok(countries)
}

pub fn write_scenario(path: &Path, countries: &BTreeMap<String, Country>) -> Result<()> {
    let mut w = TableWriter::create(path, &["ssp", "country", "year", "urban_pop", "nonurban_pop", "gdp"])?;
    for ssp in Ssp::ALL {
        for c in countries.values() {
            let Some(series) = c.scenario_series.get(&ssp) else {
                continue;
            };
            for (year, v) in series {
                w.row(&[
                    ssp.to_string(),
                    c.code.clone(),
                    year.to_string(),
                    format_number(v.urban_pop),
                    format_number(v.nonurban_pop),
                    format_number(v.gdp),
                ])?;
            }
        }
    }
    w.finish()
}

#[derive(Debug, Deserialize)]
struct ObservedRecord {
    grid_id: String,
    year: Year,
    urban_pop: f64,
    nonurban_pop: f64,
    gdp: f64,
}

/// Reads `observed.csv` (`grid_id,year,urban_pop,nonurban_pop,gdp`) and
/// aligns it with `grid`. All rows must share one year.
pub fn read_observed(path: &Path, grid: &[GridCell]) -> Result<ObservedGrid> {
    let position: BTreeMap<&str, usize> = grid.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect();
    let mut rdr = open_reader(path)?;
    let mut out = ObservedGrid {
        year: 0,
        values: vec![ScenarioValues::default(); grid.len()],
    };
    let mut year = None;
    for r in rdr.deserialize::<ObservedRecord>() {
        let r = r.map_err(|e| Error::csv(path, e))?;
        if *year.get_or_insert(r.year) != r.year {
            return Err(Error::InvalidInput(format!("{}: mixed years", path.display())));
        }
        let g = *position
            .get(r.grid_id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("{}: unknown grid id {}", path.display(), r.grid_id)))?;
        let v = ScenarioValues {
            urban_pop: r.urban_pop,
            nonurban_pop: r.nonurban_pop,
            gdp: r.gdp,
        };
        if [v.urban_pop, v.nonurban_pop, v.gdp].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(format!("{}: negative value for {}", path.display(), r.grid_id)));
        }
        out.values[g] = v;
    }
    out.year = year.ok_or_else(|| Error::Missing(format!("{} has no rows", path.display())))?;
    Ok(out)
}

pub fn write_observed(path: &Path, grid: &[GridCell], observed: &ObservedGrid) -> Result<()> {
    let mut w = TableWriter::create(path, &["grid_id", "year", "urban_pop", "nonurban_pop", "gdp"])?;
    for (g, v) in grid.iter().zip(&observed.values) {
        w.row(&[
            g.id.clone(),
            observed.year.to_string(),
            format_number(v.urban_pop),
            format_number(v.nonurban_pop),
            format_number(v.gdp),
        ])?;
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(1.5), "1.5");
        assert_eq!(format_number(100.0), "100");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(123456.789012345), "123456.789012");
        assert_eq!(format_number(2.5e-9), "2.50000000000e-9");
        assert_eq!(format_number(9.9999999999999e2), "1000");
    }

    proptest! {
        #[test]
        fn formatted_numbers_round_trip_to_12_digits(x in -1e20..1e20f64) {
            let back: f64 = format_number(x).parse().unwrap();
            prop_assert!((back - x).abs() <= 1e-11 * x.abs());
        }
    }

    #[test]
    fn cities_round_trip_with_missing_years() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cities.csv");
        let mut pop = BTreeMap::new();
        pop.insert(1995, 1200.0);
        pop.insert(2000, 1300.5);
        let cities = vec![City {
            id: "c1".into(),
            location: LonLat::new(10.25, -3.5),
            country: "AAA".into(),
            pop,
        }];
        write_cities(&path, &cities, &[1990, 1995, 2000]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "id,lon,lat,country,pop1990,pop1995,pop2000\nc1,10.25,-3.5,AAA,,1200,1300.5\n");
        assert_eq!(read_cities(&path).unwrap(), cities);
    }
}
