//! Connectivity matrices between cities.
//!
//! Three matrices enter the growth model: a geographic kernel
//! `exp(-d/r)` truncated at a cutoff distance, and two trade-based
//! matrices that split country-pair trade across cities in proportion to
//! population, one keeping only international pairs and one keeping only
//! domestic pairs.
//!
//! The trade matrices are dense (every foreign city is a neighbour), so
//! they are stored in factored form: city shares within their country and
//! a country-by-country trade block. Matrix-vector products then cost
//! `O(n + g²)` instead of `O(n²)`.

use std::path::Path;

use log::info;
use rayon::prelude::*;

use crate::worldmodel::io::{format_number, TableWriter};
use crate::worldmodel::{LonLat, PointIndex, TradeTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixKind {
    Geo { r: f64, cutoff: f64 },
    EconInternational,
    EconNational,
}

impl MatrixKind {
    pub fn label(&self) -> &'static str {
        match self {
            MatrixKind::Geo { .. } => "geo",
            MatrixKind::EconInternational => "e1",
            MatrixKind::EconNational => "e2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EconMode {
    /// Pairs of cities in different countries.
    International,
    /// Distinct cities in the same country.
    National,
}

#[derive(Debug, Clone)]
enum Storage {
    Sparse {
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
    },
    Trade {
        mode: EconMode,
        group: Vec<usize>,
        share: Vec<f64>,
        n_groups: usize,
        /// Effective country-pair trade, row-major `n_groups x n_groups`.
        block: Vec<f64>,
    },
}

/// Non-negative `n x n` weight matrix with zero diagonal.
///
/// Entries are `row_scale[i] * raw(i, j)`; row standardization only
/// touches the scale vector.
#[derive(Debug, Clone)]
pub struct ConnectivityMatrix {
    n: usize,
    kind: MatrixKind,
    storage: Storage,
    row_scale: Vec<f64>,
    row_standardized: bool,
}

impl ConnectivityMatrix {
    /// Builds a sparse matrix from per-row `(col, weight)` lists.
    pub fn from_rows(kind: MatrixKind, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            for (j, w) in row {
                if j >= n || j == i {
                    return Err(Error::InvalidInput(format!("invalid matrix entry ({i}, {j})")));
                }
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvalidInput(format!("weight ({i}, {j}) = {w} must be non-negative")));
                }
                cols.push(j as u32);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            kind,
            storage: Storage::Sparse { row_ptr, cols, vals },
            row_scale: vec![1.0; n],
            row_standardized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    /// Stored non-zero count (for the factored trade form, the count the
    /// equivalent dense matrix would hold).
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Sparse { vals, .. } => vals.iter().filter(|v| **v > 0.0).count(),
            Storage::Trade { .. } => (0..self.n)
                .map(|i| (0..self.n).filter(|&j| self.raw(i, j) > 0.0).count())
                .sum(),
        }
    }

    fn raw(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.storage {
            Storage::Sparse { row_ptr, cols, vals } => {
                let range = row_ptr[i]..row_ptr[i + 1];
                match cols[range.clone()].binary_search(&(j as u32)) {
                    Ok(k) => vals[range.start + k],
                    Err(_) => 0.0,
                }
            }
            Storage::Trade {
                mode,
                group,
                share,
                n_groups,
                block,
            } => {
                let (gi, gj) = (group[i], group[j]);
                let keep = match mode {
                    EconMode::International => gi != gj,
                    EconMode::National => gi == gj,
                };
                if keep {
                    share[i] * share[j] * block[gi * n_groups + gj]
                } else {
                    0.0
                }
            }
        }
    }

    /// Entry `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row_scale[i] * self.raw(i, j)
    }

    /// Non-zero entries in row-major order. `O(n²)` for the trade form;
    /// intended for dumps and tests.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        match &self.storage {
            Storage::Sparse { row_ptr, cols, vals } => {
                for i in 0..self.n {
                    for k in row_ptr[i]..row_ptr[i + 1] {
                        let w = self.row_scale[i] * vals[k];
                        if w > 0.0 {
                            out.push((i, cols[k] as usize, w));
                        }
                    }
                }
            }
            Storage::Trade { .. } => {
                for i in 0..self.n {
                    for j in 0..self.n {
                        let w = self.get(i, j);
                        if w > 0.0 {
                            out.push((i, j, w));
                        }
                    }
                }
            }
        }
        out
    }

    fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        match &self.storage {
            Storage::Sparse { row_ptr, cols, vals } => (0..self.n)
                .into_par_iter()
                .map(|i| {
                    (row_ptr[i]..row_ptr[i + 1])
                        .map(|k| vals[k] * x[cols[k] as usize])
                        .sum()
                })
                .collect(),
            Storage::Trade {
                mode,
                group,
                share,
                n_groups,
                block,
            } => {
                let g = *n_groups;
                let mut mass = vec![0.0; g];
                for i in 0..self.n {
                    mass[group[i]] += share[i] * x[i];
                }
                match mode {
                    EconMode::International => {
                        let foreign: Vec<f64> = (0..g)
                            .map(|a| {
                                (0..g)
                                    .filter(|&b| b != a)
                                    .map(|b| block[a * g + b] * mass[b])
                                    .sum()
                            })
                            .collect();
                        (0..self.n).map(|i| share[i] * foreign[group[i]]).collect()
                    }
                    EconMode::National => (0..self.n)
                        .map(|i| {
                            let gi = group[i];
                            share[i] * block[gi * g + gi] * (mass[gi] - share[i] * x[i])
                        })
                        .collect(),
                }
            }
        }
    }

    /// Matrix-vector product `W x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch");
        let mut y = self.apply_raw(x);
        for (v, s) in y.iter_mut().zip(&self.row_scale) {
            *v *= s;
        }
        y
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.apply(&vec![1.0; self.n])
    }

    /// Divides every row with a positive sum by that sum. All-zero rows
    /// stay all-zero (isolated nodes have no spatial lag).
    pub fn row_standardize(mut self) -> Self {
        let sums = self.row_sums();
        for (scale, sum) in self.row_scale.iter_mut().zip(sums) {
            if sum > 0.0 {
                *scale /= sum;
            }
        }
        self.row_standardized = true;
        self
    }

    /// Writes `row_id,col_id,weight` for every non-zero entry.
    pub fn write_triplets(&self, path: &Path, ids: &[String]) -> Result<()> {
        let mut w = TableWriter::create(path, &["row_id", "col_id", "weight"])?;
        for (i, j, v) in self.triplets() {
            w.row(&[ids[i].clone(), ids[j].clone(), format_number(v)])?;
        }
        w.finish()
    }
}

/// Neighbour distances within a cutoff, in CSR layout, self excluded.
///
/// Building this once at the largest cutoff lets a range search derive
/// the kernel for every candidate range without recomputing distances.
#[derive(Debug, Clone)]
pub struct NeighborList {
    cutoff: f64,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    dists: Vec<f64>,
}

impl NeighborList {
    pub fn build(points: &[LonLat], cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0) {
            return Err(Error::InvalidInput(format!("cutoff must be positive, got {cutoff}")));
        }
        let bucket = (cutoff / 111.0).clamp(0.25, 30.0);
        let index = PointIndex::new(points, bucket);
        let rows: Vec<Vec<(usize, f64)>> = points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut row = index.within(*p, cutoff);
                row.retain(|&(j, _)| j != i);
                row
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(points.len() + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut dists = Vec::with_capacity(nnz);
        for row in rows {
            for (j, d) in row {
                cols.push(j as u32);
                dists.push(d);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            cutoff,
            row_ptr,
            cols,
            dists,
        })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> usize {
        self.cols.len()
    }
}

/// Raw geographic kernel `exp(-d/r)` for pairs within `cutoff` km.
pub fn build_geo(points: &[LonLat], r: f64, cutoff: f64) -> Result<ConnectivityMatrix> {
    check_range(r, cutoff)?;
    geo_from_neighbors(&NeighborList::build(points, cutoff)?, r, cutoff)
}

fn check_range(r: f64, cutoff: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!("range r must be positive, got {r}")));
    }
    if !(cutoff > 0.0) {
        return Err(Error::InvalidInput(format!("cutoff must be positive, got {cutoff}")));
    }
    Ok(())
}

/// Same as [`build_geo`] from precomputed neighbour distances. `cutoff`
/// must not exceed the list's own cutoff.
pub fn geo_from_neighbors(neighbors: &NeighborList, r: f64, cutoff: f64) -> Result<ConnectivityMatrix> {
    check_range(r, cutoff)?;
    if cutoff > neighbors.cutoff * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "cutoff {cutoff} km exceeds neighbour list cutoff {} km",
            neighbors.cutoff
        )));
    }
    let n = neighbors.len();
    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let range = neighbors.row_ptr[i]..neighbors.row_ptr[i + 1];
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for k in range {
                let d = neighbors.dists[k];
                if d <= cutoff {
                    cols.push(neighbors.cols[k]);
                    vals.push((-d / r).exp());
                }
            }
            (cols, vals)
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let nnz = rows.iter().map(|r| r.0.len()).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    for (c, v) in rows {
        cols.extend(c);
        vals.extend(v);
        row_ptr.push(cols.len());
    }
    Ok(ConnectivityMatrix {
        n,
        kind: MatrixKind::Geo { r, cutoff },
        storage: Storage::Sparse { row_ptr, cols, vals },
        row_scale: vec![1.0; n],
        row_standardized: false,
    })
}

/// Estimated trade between two cities: the country-pair amount split by
/// each city's share of its country's population.
pub fn trade_estimate(
    city_pop: f64,
    country_pop: f64,
    other_city_pop: f64,
    other_country_pop: f64,
    country_trade: f64,
) -> Result<f64> {
    if !(country_pop > 0.0 && other_country_pop > 0.0) {
        return Err(Error::InvalidInput(
            "country population must be positive to split trade across cities".into(),
        ));
    }
    Ok(city_pop / country_pop * (other_city_pop / other_country_pop) * country_trade)
}

/// City populations grouped by country, with the country-pair trade
/// needed to build the economic matrices.
#[derive(Debug, Clone)]
pub struct CityEconomy {
    codes: Vec<String>,
    group: Vec<usize>,
    city_pop: Vec<f64>,
    country_pop: Vec<f64>,
    trade: Vec<f64>,
    has_domestic_trade: Vec<bool>,
}

impl CityEconomy {
    /// `countries[i]` and `pops[i]` describe city `i`. Country populations
    /// are the sums of their cities' populations.
    pub fn new(countries: &[&str], pops: &[f64], trade: &TradeTable) -> Result<Self> {
        if countries.len() != pops.len() {
            return Err(Error::InvalidInput("country and population lists differ in length".into()));
        }
        let mut codes: Vec<String> = countries.iter().map(|c| c.to_string()).collect();
        codes.sort();
        codes.dedup();
        let group: Vec<usize> = countries
            .iter()
            .map(|c| codes.binary_search_by(|x| x.as_str().cmp(c)).expect("code present"))
            .collect();
        let g = codes.len();
        let mut country_pop = vec![0.0; g];
        for (i, p) in pops.iter().enumerate() {
            if !(p.is_finite() && *p >= 0.0) {
                return Err(Error::InvalidInput(format!("city {i}: invalid population {p}")));
            }
            country_pop[group[i]] += p;
        }
        if let Some(k) = country_pop.iter().position(|p| *p <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "country {} has zero population; city trade shares are undefined",
                codes[k]
            )));
        }
        let mut block = vec![0.0; g * g];
        let mut has_domestic_trade = vec![false; g];
        for a in 0..g {
            for b in 0..g {
                block[a * g + b] = trade.get(&codes[a], &codes[b]);
            }
            has_domestic_trade[a] = trade.contains(&codes[a], &codes[a]);
        }
        Ok(Self {
            codes,
            group,
            city_pop: pops.to_vec(),
            country_pop,
            trade: block,
            has_domestic_trade,
        })
    }

    pub fn n_cities(&self) -> usize {
        self.group.len()
    }

    pub fn country_codes(&self) -> &[String] {
        &self.codes
    }

    pub fn country_of(&self, city: usize) -> &str {
        &self.codes[self.group[city]]
    }

    pub fn country_pop(&self, code: &str) -> Option<f64> {
        self.codes
            .binary_search_by(|x| x.as_str().cmp(code))
            .ok()
            .map(|k| self.country_pop[k])
    }

    pub fn share(&self, city: usize) -> f64 {
        self.city_pop[city] / self.country_pop[self.group[city]]
    }

    /// Trade estimate for the ordered city pair `(c, d)`.
    pub fn trade_estimate(&self, c: usize, d: usize) -> Result<f64> {
        let (gc, gd) = (self.group[c], self.group[d]);
        trade_estimate(
            self.city_pop[c],
            self.country_pop[gc],
            self.city_pop[d],
            self.country_pop[gd],
            self.trade[gc * self.codes.len() + gd],
        )
    }
}

/// Raw economic connectivity: international or domestic trade estimates.
///
/// When a country has no domestic entry in the trade table, its domestic
/// weights fall back to population products `P_c P_c'`; after row
/// standardization this equals any constant domestic trade amount.
pub fn build_econ(economy: &CityEconomy, mode: EconMode) -> ConnectivityMatrix {
    let g = economy.codes.len();
    let mut block = economy.trade.clone();
    if mode == EconMode::National {
        let fallback: Vec<&str> = (0..g)
            .filter(|&a| !economy.has_domestic_trade[a])
            .map(|a| economy.codes[a].as_str())
            .collect();
        for a in 0..g {
            if !economy.has_domestic_trade[a] {
                block[a * g + a] = economy.country_pop[a] * economy.country_pop[a];
            }
        }
        if !fallback.is_empty() {
            info!(
                "domestic trade missing for {} countries; using population-product weights",
                fallback.len()
            );
        }
    }
    let n = economy.n_cities();
    let share = (0..n).map(|i| economy.share(i)).collect();
    ConnectivityMatrix {
        n,
        kind: match mode {
            EconMode::International => MatrixKind::EconInternational,
            EconMode::National => MatrixKind::EconNational,
        },
        storage: Storage::Trade {
            mode,
            group: economy.group.clone(),
            share,
            n_groups: g,
            block,
        },
        row_scale: vec![1.0; n],
        row_standardized: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::worldmodel::arc_distance;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<LonLat> {
        (0..n)
            .map(|_| LonLat::new(rng.random_range(0.0..10.0), rng.random_range(40.0..50.0)))
            .collect()
    }

    fn three_country_world(rng: &mut ChaCha8Rng) -> (Vec<&'static str>, Vec<f64>, TradeTable) {
        let codes = ["AAA", "BBB", "CCC"];
        let countries: Vec<&str> = (0..12).map(|i| codes[i % 3]).collect();
        let pops: Vec<f64> = (0..12).map(|_| rng.random_range(1e3..1e6)).collect();
        let mut trade = TradeTable::new();
        for a in 0..3 {
            for b in a..3 {
                trade.insert(codes[a], codes[b], rng.random_range(1.0..500.0)).unwrap();
            }
        }
        (countries, pops, trade)
    }

    #[test]
    fn geo_kernel_values() {
        let a = LonLat::new(0.0, 0.0);
        let pts = [a, a, LonLat::new(1.0, 0.0)];
        let d = arc_distance(a, pts[2]);
        let w = build_geo(&pts, d, 5.0 * d).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_relative_eq!(w.get(0, 2), (-1.0f64).exp(), max_relative = 1e-14);
        assert_eq!(w.get(0, 0), 0.0);

        let r = 100.0;
        let w = build_geo(&[a, LonLat::new(300.0 / 111.194_926_644_558_74, 0.0)], r, 500.0).unwrap();
        assert_relative_eq!(w.get(0, 1), (-3.0f64).exp(), max_relative = 1e-9);
        assert!((w.get(0, 1) - 0.0498).abs() < 1e-4);
    }

    #[test]
    fn geo_rejects_bad_range() {
        let pts = [LonLat::new(0.0, 0.0)];
        assert!(build_geo(&pts, 0.0, 10.0).is_err());
        assert!(build_geo(&pts, -1.0, 10.0).is_err());
        assert!(build_geo(&pts, 1.0, 0.0).is_err());
    }

    #[test]
    fn geo_matches_dense_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 60);
        let (r, cutoff) = (80.0, 300.0);
        let w = build_geo(&pts, r, cutoff).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d = arc_distance(pts[i], pts[j]);
                let expected = if i != j && d <= cutoff { (-d / r).exp() } else { 0.0 };
                assert_eq!(w.get(i, j), expected);
                assert_eq!(w.get(i, j), w.get(j, i));
            }
        }
    }

    #[test]
    fn trade_estimate_cases() {
        assert_relative_eq!(trade_estimate(2.0, 10.0, 3.0, 10.0, 100.0).unwrap(), 6.0);
        assert_eq!(trade_estimate(2.0, 10.0, 3.0, 10.0, 0.0).unwrap(), 0.0);
        assert!(trade_estimate(2.0, 0.0, 3.0, 10.0, 1.0).is_err());
        let t = TradeTable::new();
        assert!(CityEconomy::new(&["A", "B"], &[0.0, 1.0], &t).is_err());
    }

    #[test]
    fn trade_estimates_sum_to_country_pair_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (countries, pops, trade) = three_country_world(&mut rng);
        let econ = CityEconomy::new(&countries, &pops, &trade).unwrap();
        for a in ["AAA", "BBB", "CCC"] {
            for b in ["AAA", "BBB", "CCC"] {
                let mut total = 0.0;
                for c in (0..12).filter(|&c| countries[c] == a) {
                    for d in (0..12).filter(|&d| countries[d] == b) {
                        total += econ.trade_estimate(c, d).unwrap();
                    }
                }
                assert_relative_eq!(total, trade.get(a, b), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn econ_matrices_split_trade_by_country_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (countries, pops, trade) = three_country_world(&mut rng);
        let econ = CityEconomy::new(&countries, &pops, &trade).unwrap();
        let e1 = build_econ(&econ, EconMode::International);
        let e2 = build_econ(&econ, EconMode::National);
        for c in 0..12 {
            for d in 0..12 {
                let expected = if c == d { 0.0 } else { econ.trade_estimate(c, d).unwrap() };
                assert_relative_eq!(e1.get(c, d) + e2.get(c, d), expected, max_relative = 1e-12);
                if countries[c] == countries[d] {
                    assert_eq!(e1.get(c, d), 0.0);
                    if c != d {
                        assert!(e2.get(c, d) > 0.0);
                    }
                } else {
                    assert_eq!(e2.get(c, d), 0.0);
                }
            }
        }
    }

    #[test]
    fn factored_product_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (countries, pops, trade) = three_country_world(&mut rng);
        let econ = CityEconomy::new(&countries, &pops, &trade).unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        for mode in [EconMode::International, EconMode::National] {
            let w = build_econ(&econ, mode).row_standardize();
            let fast = w.apply(&x);
            for i in 0..12 {
                let dense: f64 = (0..12).map(|j| w.get(i, j) * x[j]).sum();
                assert_relative_eq!(fast[i], dense, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn domestic_fallback_uses_population_products() {
        let mut trade = TradeTable::new();
        trade.insert("A", "B", 10.0).unwrap();
        let econ = CityEconomy::new(&["A", "A", "A", "B"], &[1.0, 2.0, 5.0, 4.0], &trade).unwrap();
        let e2 = build_econ(&econ, EconMode::National);
        assert_relative_eq!(e2.get(0, 1), 2.0, max_relative = 1e-12);
        assert_relative_eq!(e2.get(1, 2), 10.0, max_relative = 1e-12);
        let s = e2.row_standardize();
        assert_relative_eq!(s.get(0, 1), 2.0 / 7.0, max_relative = 1e-12);
        assert_eq!(s.row_sums()[3], 0.0);
    }

    #[test]
    fn row_standardize_examples() {
        let m = ConnectivityMatrix::from_rows(
            MatrixKind::Geo { r: 1.0, cutoff: 1.0 },
            vec![vec![(1, 2.0), (2, 4.0)], vec![], vec![(0, 1.0)]],
        )
        .unwrap()
        .row_standardize();
        assert!(m.is_row_standardized());
        assert_relative_eq!(m.get(0, 1), 1.0 / 3.0);
        assert_relative_eq!(m.get(0, 2), 2.0 / 3.0);
        assert_eq!(m.row_sums()[1], 0.0);
        assert_eq!(m.get(2, 0), 1.0);
    }

    #[test]
    fn trade_scaling_leaves_standardized_matrices_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (countries, pops, trade) = three_country_world(&mut rng);
        let a = CityEconomy::new(&countries, &pops, &trade).unwrap();
        let b = CityEconomy::new(&countries, &pops, &trade.scaled(37.5)).unwrap();
        for mode in [EconMode::International, EconMode::National] {
            let wa = build_econ(&a, mode).row_standardize();
            let wb = build_econ(&b, mode).row_standardize();
            for i in 0..12 {
                for j in 0..12 {
                    assert_relative_eq!(wa.get(i, j), wb.get(i, j), max_relative = 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn standardized_rows_sum_to_one_and_standardization_is_idempotent(
            rows in proptest::collection::vec(
                proptest::collection::btree_map(0usize..30, 0.0..10.0f64, 0..8), 30)
        ) {
            let rows: Vec<Vec<(usize, f64)>> = rows
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.into_iter().filter(|(j, _)| *j != i).collect())
                .collect();
            let raw = ConnectivityMatrix::from_rows(MatrixKind::EconNational, rows).unwrap();
            let raw_sums = raw.row_sums();
            let once = raw.row_standardize();
            for (s, raw_s) in once.row_sums().iter().zip(&raw_sums) {
                if *raw_s > 0.0 {
                    prop_assert!((s - 1.0).abs() <= 1e-12);
                } else {
                    prop_assert_eq!(*s, 0.0);
                }
            }
            let twice = once.clone().row_standardize();
            for (a, b) in once.triplets().iter().zip(twice.triplets().iter()) {
                prop_assert_eq!((a.0, a.1), (b.0, b.1));
                prop_assert!((a.2 - b.2).abs() <= 1e-12 * a.2);
            }
        }
    }
}
