//! Flat `key = value` configuration files for runs and synthetic worlds.
//!
//! Blank lines and `#` comments are ignored. Every key must be known;
//! unknown or repeated keys are rejected. Relative paths are resolved
//! against the directory of the configuration file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::downscaler::{BoostingParams, Target};
use crate::worldmodel::{Ssp, Year};
use crate::{Error, Result};

struct Fields {
    origin: String,
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)));
            };
            let key = key.trim().to_owned();
            if map.insert(key.clone(), (i + 1, value.trim().to_owned())).is_some() {
                return Err(Error::Config(format!("{origin}:{}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self {
            origin: origin.to_owned(),
            map,
        })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Config(format!("{}: missing required key `{key}`", self.origin)))
    }

    fn parsed<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| {
                Error::Config(format!("{}:{line}: cannot parse `{v}` for `{key}`", self.origin))
            }),
        }
    }

    fn with<T>(&mut self, key: &str, default: T, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => parse(&v).map_err(|e| Error::Config(format!("{}:{line}: `{key}`: {e}", self.origin))),
        }
    }

    fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            return Ok(());
        }
        let unknown: Vec<String> = self
            .map
            .iter()
            .map(|(k, (line, _))| format!("`{k}` (line {line})"))
            .collect();
        Err(Error::Config(format!("{}: unknown keys {}", self.origin, unknown.join(", "))))
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("invalid grid `{spec}`"));
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0 && start <= stop) {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + step * k as f64).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(bad());
    }
    Ok(values)
}

fn format_grid(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_ssps(spec: &str) -> Result<Vec<Ssp>> {
    let mut out: Vec<Ssp> = spec.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Config("no scenarios selected".into()));
    }
    Ok(out)
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got `{v}`"))),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Settings of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cities: PathBuf,
    pub grid: PathBuf,
    pub trade: PathBuf,
    pub scenario: PathBuf,
    /// Base-year gridded reference the ensemble weights are fitted to.
    pub observed: PathBuf,
    /// Known generating parameters, for recovery checks.
    pub truth: Option<PathBuf>,
    pub scenarios: Vec<Ssp>,
    /// Projection start; also the last observed population year.
    pub base_year: Year,
    pub horizon: Year,
    pub step: Year,
    pub resolution: f64,
    pub r_grid: Vec<f64>,
    /// `None` selects 2 km steps up to `min(r, 100)`.
    pub r_prime_grid: Option<Vec<f64>>,
    pub geo_cutoff_factor: f64,
    pub potential_cutoff_factor: f64,
    pub boosting: BoostingParams,
    pub seed: u64,
    pub dump_matrices: bool,
    /// SHA-256 of the configuration text.
    pub hash: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, dir, &path.display().to_string())?;
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, base_dir: &Path, origin: &str) -> Result<Self> {
        let mut f = Fields::parse(text, origin)?;
        let path = |v: String| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let cfg = Self {
            cities: path(f.required("cities")?),
            grid: path(f.required("grid")?),
            trade: path(f.required("trade")?),
            scenario: path(f.required("scenario")?),
            observed: path(f.required("observed")?),
            truth: f.take("truth").map(|(_, v)| path(v)),
            scenarios: f.with("scenarios", Ssp::ALL.to_vec(), parse_ssps)?,
            base_year: f.parsed("base_year", 2000)?,
            horizon: f.parsed("horizon", 2100)?,
            step: f.parsed("step", 5)?,
            resolution: f.parsed("resolution", 0.5)?,
            r_grid: f.with("r_grid", parse_grid("25:500:25")?, parse_grid)?,
            r_prime_grid: f.with("r_prime_grid", None, |v| {
                if v == "auto" {
                    Ok(None)
                } else {
                    parse_grid(v).map(Some)
                }
            })?,
            geo_cutoff_factor: f.parsed("geo_cutoff_factor", 5.0)?,
            potential_cutoff_factor: f.parsed("potential_cutoff_factor", 5.0)?,
            boosting: BoostingParams {
                learning_rate: f.parsed("learning_rate", 0.1)?,
                iterations: f.parsed("iterations", 200)?,
            },
            seed: f.parsed("seed", 0)?,
            dump_matrices: f.with("dump_matrices", false, parse_bool)?,
            hash: sha256_hex(text.as_bytes()),
        };
        f.finish()?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.step <= 0 || self.horizon < self.base_year + self.step {
            return Err(Error::Config("need step > 0 and horizon >= base_year + step".into()));
        }
        if (self.horizon - self.base_year) % self.step != 0 {
            return Err(Error::Config("step must divide horizon - base_year".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if !(self.geo_cutoff_factor > 0.0 && self.potential_cutoff_factor > 0.0) {
            return Err(Error::Config("cutoff factors must be positive".into()));
        }
        let b = self.boosting;
        if !(b.learning_rate > 0.0 && b.learning_rate <= 1.0) || b.iterations == 0 {
            return Err(Error::Config("learning_rate must be in (0, 1] and iterations positive".into()));
        }
        Ok(())
    }

    fn check_files(&self) -> Result<()> {
        let files = [&self.cities, &self.grid, &self.trade, &self.scenario, &self.observed];
        for p in files.into_iter().chain(self.truth.as_ref()) {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Years written by every stage.
    pub fn years(&self) -> Vec<Year> {
        (self.base_year..=self.horizon).step_by(self.step as usize).collect()
    }

    /// Year at which the growth model is estimated.
    pub fn estimation_year(&self) -> Year {
        self.base_year - self.step
    }

    /// Renders a configuration with paths relative to the config file.
    pub fn render(&self, relative_to: &Path) -> String {
        let rel = |p: &Path| -> String {
            p.strip_prefix(relative_to).unwrap_or(p).display().to_string()
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("cities", rel(&self.cities));
        kv("grid", rel(&self.grid));
        kv("trade", rel(&self.trade));
        kv("scenario", rel(&self.scenario));
        kv("observed", rel(&self.observed));
        if let Some(t) = &self.truth {
            kv("truth", rel(t));
        }
        kv(
            "scenarios",
            self.scenarios.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
        );
        kv("base_year", self.base_year.to_string());
        kv("horizon", self.horizon.to_string());
        kv("step", self.step.to_string());
        kv("resolution", self.resolution.to_string());
        kv("r_grid", format_grid(&self.r_grid));
        kv(
            "r_prime_grid",
            self.r_prime_grid.as_deref().map_or("auto".into(), format_grid),
        );
        kv("geo_cutoff_factor", self.geo_cutoff_factor.to_string());
        kv("potential_cutoff_factor", self.potential_cutoff_factor.to_string());
        kv("learning_rate", self.boosting.learning_rate.to_string());
        kv("iterations", self.boosting.iterations.to_string());
        kv("seed", self.seed.to_string());
        kv("dump_matrices", self.dump_matrices.to_string());
        s
    }
}

/// Parameters of a generated test world.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldSpec {
    pub seed: u64,
    /// Countries are laid out as a block grid of this many columns.
    pub country_columns: usize,
    pub n_countries: usize,
    pub cities_per_country: usize,
    pub grid_columns: usize,
    pub grid_rows: usize,
    pub resolution: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub zipf_exponent: f64,
    pub largest_city: f64,
    /// Log-normal scatter around the rank-size law.
    pub size_noise: f64,
    pub trade_scale: f64,
    pub trade_distance_decay: f64,
    pub intercept: f64,
    pub alpha: f64,
    pub rho_geo: f64,
    pub rho_e1: f64,
    pub rho_e2: f64,
    pub beta_road: f64,
    pub beta_ocean: f64,
    pub beta_airport: f64,
    /// Standard deviation of the unobserved growth before the first year.
    pub lag_noise: f64,
    /// Country-wide component of the growth before the first year.
    pub country_lag_noise: f64,
    pub growth_noise: f64,
    pub r: f64,
    pub geo_cutoff_factor: f64,
    pub r_prime: f64,
    pub r_prime_agri: f64,
    pub b0: f64,
    pub bq: f64,
    pub b0_agri: f64,
    pub bq_agri: f64,
    pub area_noise: f64,
    pub observed_noise: f64,
    pub omega: BTreeMap<Target, Vec<(usize, f64)>>,
    pub base_year: Year,
    pub horizon: Year,
    pub step: Year,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            country_columns: 5,
            n_countries: 20,
            cities_per_country: 250,
            grid_columns: 100,
            grid_rows: 100,
            resolution: 0.5,
            origin_lon: 0.0,
            origin_lat: 0.0,
            zipf_exponent: 1.0,
            largest_city: 2.0e7,
            size_noise: 0.05,
            trade_scale: 1e-6,
            trade_distance_decay: 1.0,
            intercept: 0.03,
            alpha: 0.001,
            rho_geo: 0.5,
            rho_e1: 0.10,
            rho_e2: 0.05,
            beta_road: 0.004,
            beta_ocean: -0.002,
            beta_airport: -0.002,
            lag_noise: 0.2,
            country_lag_noise: 0.1,
            growth_noise: 0.005,
            r: 150.0,
            geo_cutoff_factor: 5.0,
            r_prime: 20.0,
            r_prime_agri: 14.0,
            b0: 3.0,
            bq: 5e-4,
            b0_agri: 150.0,
            bq_agri: 2e-3,
            area_noise: 0.1,
            observed_noise: 0.1,
            omega: BTreeMap::from([
                (Target::UrbanPop, vec![(0, 0.5), (11, 0.3), (5, 0.2)]),
                (Target::NonurbanPop, vec![(0, 0.6), (9, 0.4)]),
                (Target::Gdp, vec![(12, 0.7), (2, 0.3)]),
            ]),
            base_year: 2000,
            horizon: 2100,
            step: 5,
        }
    }
}

fn parse_omega(v: &str) -> Result<Vec<(usize, f64)>> {
    let bad = || Error::Config(format!("expected `k:weight,...`, got `{v}`"));
    let pairs: Vec<(usize, f64)> = v
        .split(',')
        .map(|p| {
            let (k, w) = p.split_once(':').ok_or_else(bad)?;
            Ok((k.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
        })
        .collect::<Result<_>>()?;
    let sum: f64 = pairs.iter().map(|p| p.1).sum();
    if pairs.iter().any(|p| p.1 < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mixture weights must be non-negative and sum to 1: `{v}`")));
    }
    Ok(pairs)
}

impl SyntheticWorldSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let d = Self::default();
        let mut f = Fields::parse(text, origin)?;
        let mut omega = d.omega.clone();
        for t in Target::ALL {
            if let Some(w) = f.with(&format!("omega_{}", t.as_str()), None, |v| parse_omega(v).map(Some))? {
                omega.insert(t, w);
            }
        }
        let spec = Self {
            seed: f.parsed("seed", d.seed)?,
            country_columns: f.parsed("country_columns", d.country_columns)?,
            n_countries: f.parsed("n_countries", d.n_countries)?,
            cities_per_country: f.parsed("cities_per_country", d.cities_per_country)?,
            grid_columns: f.parsed("grid_columns", d.grid_columns)?,
            grid_rows: f.parsed("grid_rows", d.grid_rows)?,
            resolution: f.parsed("resolution", d.resolution)?,
            origin_lon: f.parsed("origin_lon", d.origin_lon)?,
            origin_lat: f.parsed("origin_lat", d.origin_lat)?,
            zipf_exponent: f.parsed("zipf_exponent", d.zipf_exponent)?,
            largest_city: f.parsed("largest_city", d.largest_city)?,
            size_noise: f.parsed("size_noise", d.size_noise)?,
            trade_scale: f.parsed("trade_scale", d.trade_scale)?,
            trade_distance_decay: f.parsed("trade_distance_decay", d.trade_distance_decay)?,
            intercept: f.parsed("intercept", d.intercept)?,
            alpha: f.parsed("alpha", d.alpha)?,
            rho_geo: f.parsed("rho_geo", d.rho_geo)?,
            rho_e1: f.parsed("rho_e1", d.rho_e1)?,
            rho_e2: f.parsed("rho_e2", d.rho_e2)?,
            beta_road: f.parsed("beta_road", d.beta_road)?,
            beta_ocean: f.parsed("beta_ocean", d.beta_ocean)?,
            beta_airport: f.parsed("beta_airport", d.beta_airport)?,
            lag_noise: f.parsed("lag_noise", d.lag_noise)?,
            country_lag_noise: f.parsed("country_lag_noise", d.country_lag_noise)?,
            growth_noise: f.parsed("growth_noise", d.growth_noise)?,
            r: f.parsed("r", d.r)?,
            geo_cutoff_factor: f.parsed("geo_cutoff_factor", d.geo_cutoff_factor)?,
            r_prime: f.parsed("r_prime", d.r_prime)?,
            r_prime_agri: f.parsed("r_prime_agri", d.r_prime_agri)?,
            b0: f.parsed("b0", d.b0)?,
            bq: f.parsed("bq", d.bq)?,
            b0_agri: f.parsed("b0_agri", d.b0_agri)?,
            bq_agri: f.parsed("bq_agri", d.bq_agri)?,
            area_noise: f.parsed("area_noise", d.area_noise)?,
            observed_noise: f.parsed("observed_noise", d.observed_noise)?,
            omega,
            base_year: f.parsed("base_year", d.base_year)?,
            horizon: f.parsed("horizon", d.horizon)?,
            step: f.parsed("step", d.step)?,
        };
        f.finish()?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        let counts = [
            self.country_columns,
            self.n_countries,
            self.cities_per_country,
            self.grid_columns,
            self.grid_rows,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("all counts must be at least 1".into()));
        }
        if self.grid_columns < self.country_columns || self.grid_rows < self.n_countries.div_ceil(self.country_columns) {
            return Err(Error::Config("grid too small for the country layout".into()));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::Config("zipf_exponent must be positive".into()));
        }
        let positive = [
            self.resolution,
            self.largest_city,
            self.r,
            self.r_prime,
            self.r_prime_agri,
            self.geo_cutoff_factor,
            self.trade_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("sizes, ranges and scales must be positive".into()));
        }
        let noise = [self.size_noise, self.lag_noise, self.country_lag_noise, self.growth_noise, self.area_noise, self.observed_noise];
        if noise.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if self.rho_geo.abs() + self.rho_e1.abs() + self.rho_e2.abs() >= 1.0 {
            return Err(Error::Config("|rho_geo| + |rho_e1| + |rho_e2| must be below 1".into()));
        }
        let lon_max = self.origin_lon + self.resolution * self.grid_columns as f64;
        let lat_max = self.origin_lat + self.resolution * self.grid_rows as f64;
        if self.origin_lon < -180.0 || lon_max > 180.0 || self.origin_lat < -90.0 || lat_max > 90.0 {
            return Err(Error::Config("grid extends beyond valid coordinates".into()));
        }
        for (t, w) in &self.omega {
            let k = crate::downscaler::submodels(*t).len();
            if w.iter().any(|(i, _)| *i >= k) {
                return Err(Error::Config(format!("mixture for {t} names a sub-model beyond {k}")));
            }
        }
        if self.step <= 0 || self.horizon < self.base_year + self.step || (self.horizon - self.base_year) % self.step != 0 {
            return Err(Error::Config("need step > 0 dividing horizon - base_year".into()));
        }
        Ok(())
    }
}
