#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sspgrid::pipeline::synth::{generate_world, write_world};
use sspgrid::pipeline::{RunConfig, SyntheticWorldSpec};

pub fn small_spec(seed: u64) -> SyntheticWorldSpec {
    SyntheticWorldSpec {
        seed,
        n_countries: 4,
        country_columns: 2,
        cities_per_country: 60,
        grid_columns: 30,
        grid_rows: 30,
        ..Default::default()
    }
}

/// Writes a synthetic world into `dir` and returns a run configuration
/// whose defaults are overridden by `extra` (`key = value` lines).
pub fn small_run(dir: &Path, spec: &SyntheticWorldSpec, extra: &str) -> RunConfig {
    let world = generate_world(spec).unwrap();
    write_world(&world, spec, dir).unwrap();
    let text = format!(
        "cities = cities.csv\ngrid = grid.csv\ntrade = trade.csv\nscenario = scenario.csv\nobserved = observed.csv\ntruth = truth.csv\nr_grid = 50:300:50\n{extra}"
    );
    let path = dir.join("test.conf");
    std::fs::write(&path, text).unwrap();
    RunConfig::load(&path).unwrap()
}

/// Every regular file under `dir`, sorted by name.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    out
}

pub fn assert_same_files(a: &Path, b: &Path) {
    let fa = files(a);
    let fb = files(b);
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    assert_eq!(names(&fa), names(&fb));
    for (x, y) in fa.iter().zip(&fb) {
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }
}

/// Minimal CSV reader: header and rows of strings.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

pub fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}
