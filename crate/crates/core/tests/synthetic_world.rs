mod common;

use std::collections::BTreeMap;

use common::{assert_same_files, small_spec};
use sspgrid::pipeline::synth::{generate_world, read_truth, write_world};
use sspgrid::pipeline::SyntheticWorldSpec;

fn haversine_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().asin()
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn city_sizes_follow_rank_size_law() {
    let spec = SyntheticWorldSpec {
        n_countries: 4,
        country_columns: 2,
        cities_per_country: 250,
        grid_columns: 40,
        grid_rows: 40,
        zipf_exponent: 1.0,
        ..Default::default()
    };
    let world = generate_world(&spec).unwrap();
    let first = world.history_years[0];
    let mut sizes: Vec<f64> = world.cities.iter().map(|c| c.pop[&first]).collect();
    assert_eq!(sizes.len(), 1000);
    sizes.sort_by(|a, b| b.total_cmp(a));
    let log_rank: Vec<f64> = (1..=sizes.len()).map(|r| (r as f64).ln()).collect();
    let log_size: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let b = slope(&log_rank, &log_size);
    assert!((b + 1.0).abs() <= 0.1, "rank-size slope {b}");
}

#[test]
fn fixed_seed_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(21);
    for name in ["a", "b"] {
        let world = generate_world(&spec).unwrap();
        write_world(&world, &spec, &dir.path().join(name)).unwrap();
    }
    assert_same_files(&dir.path().join("a"), &dir.path().join("b"));
    let other = small_spec(22);
    write_world(&generate_world(&other).unwrap(), &other, &dir.path().join("c")).unwrap();
    assert_ne!(
        std::fs::read(dir.path().join("a/cities.csv")).unwrap(),
        std::fs::read(dir.path().join("c/cities.csv")).unwrap()
    );
}

#[test]
fn history_is_strictly_positive() {
    for seed in 0..5 {
        let world = generate_world(&small_spec(seed)).unwrap();
        for city in &world.cities {
            for year in world.history_years {
                let p = city.pop[&year];
                assert!(p.is_finite() && p > 0.0, "{} at {year}: {p}", city.id);
            }
        }
    }
}

#[test]
fn trade_has_gravity_form() {
    let spec = small_spec(23);
    let world = generate_world(&spec).unwrap();
    let first = world.history_years[0];
    let mut pop: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &world.cities {
        *pop.entry(c.country.as_str()).or_default() += c.pop[&first];
    }
    // Block centroids as the mean of cell centres.
    let mut centre: BTreeMap<&str, (f64, f64, f64)> = BTreeMap::new();
    for g in &world.grid {
        let e = centre.entry(g.country.as_str()).or_default();
        e.0 += g.center.lon;
        e.1 += g.center.lat;
        e.2 += 1.0;
    }
    let codes: Vec<&str> = pop.keys().copied().collect();
    assert_eq!(codes.len(), spec.n_countries);
    for (i, a) in codes.iter().enumerate() {
        assert_eq!(world.trade.get(a, a), 0.0);
        for b in &codes[i + 1..] {
            let (ca, cb) = (centre[a], centre[b]);
            let d = haversine_km(ca.0 / ca.2, ca.1 / ca.2, cb.0 / cb.2, cb.1 / cb.2);
            let expected = spec.trade_scale * pop[a] * pop[b] / d.powf(spec.trade_distance_decay);
            let got = world.trade.get(a, b);
            assert!((got - expected).abs() <= 1e-9 * expected, "{a}-{b}: {got} vs {expected}");
            assert_eq!(got, world.trade.get(b, a));
        }
    }
}

#[test]
fn covariates_track_city_proximity() {
    let world = generate_world(&small_spec(24)).unwrap();
    let base = world.history_years[2];
    // Nearby population mass per cell, by brute force.
    let mass: Vec<f64> = world
        .grid
        .iter()
        .map(|g| {
            world
                .cities
                .iter()
                .map(|c| {
                    let d = haversine_km(g.center.lon, g.center.lat, c.location.lon, c.location.lat);
                    if d < 100.0 { c.pop[&base] } else { 0.0 }
                })
                .sum::<f64>()
        })
        .collect();
    let log_mass: Vec<f64> = mass.iter().map(|m| (1.0 + m).ln()).collect();
    let road: Vec<f64> = world.grid.iter().map(|g| g.road_dens.ln()).collect();
    let airport: Vec<f64> = world.grid.iter().map(|g| g.airport_dist).collect();
    assert!(correlation(&log_mass, &road) > 0.5);
    assert!(correlation(&log_mass, &airport) < 0.0);
}

#[test]
fn truth_table_lists_generating_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(25);
    write_world(&generate_world(&spec).unwrap(), &spec, dir.path()).unwrap();
    let truth = read_truth(&dir.path().join("truth.csv")).unwrap();
    assert_eq!(truth["rho_geo"], spec.rho_geo);
    assert_eq!(truth["r"], spec.r);
    assert_eq!(truth["r_prime_urban"], spec.r_prime);
    for target in ["urban_pop", "nonurban_pop", "gdp"] {
        let total: f64 = truth
            .iter()
            .filter(|(k, _)| k.starts_with(&format!("omega_{target}_")))
            .map(|(_, v)| v)
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "{target}: {total}");
    }
    assert!(dir.path().join("run.conf").is_file());
}
