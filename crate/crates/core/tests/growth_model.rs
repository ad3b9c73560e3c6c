use nalgebra::{DMatrix, DVector};

use sspgrid::citygrowth::{
    assemble_design, estimate_2sls, estimate_without_lags, Coefficient, GrowthDesign, SpatialWeights,
};
use sspgrid::pipeline::synth::{generate_world, true_growth};
use sspgrid::pipeline::SyntheticWorldSpec;
use sspgrid::stats::median;
use sspgrid::worldmodel::World;

fn design_and_weights(spec: &SyntheticWorldSpec) -> (GrowthDesign, SpatialWeights) {
    let synthetic = generate_world(spec).unwrap();
    let t = synthetic.history_years[1];
    let (world, _) = World::new(
        synthetic.cities,
        synthetic.grid,
        synthetic.countries,
        synthetic.trade,
        spec.resolution,
    )
    .unwrap();
    let design = assemble_design(&world.cities, &world.grid, &world.city_cells(), t, spec.step).unwrap();
    let weights =
        SpatialWeights::for_panel(&design.panel, &world.trade, spec.r, spec.geo_cutoff_factor * spec.r).unwrap();
    (design, weights)
}

fn no_interaction(seed: u64) -> SyntheticWorldSpec {
    SyntheticWorldSpec {
        seed,
        cities_per_country: 100,
        rho_geo: 0.0,
        rho_e1: 0.0,
        rho_e2: 0.0,
        ..Default::default()
    }
}

/// Least squares of growth on `[1, log p, log road, log ocean, log airport]`
/// through a QR factorization.
fn ols_oracle(design: &GrowthDesign) -> Vec<f64> {
    let p = &design.panel;
    let n = p.len();
    let x = DMatrix::from_fn(n, 5, |i, j| match j {
        0 => 1.0,
        1 => p.p_log[i],
        _ => p.x[(i, j - 1)],
    });
    let y = DVector::from_column_slice(&design.dp_next);
    let qr = x.qr();
    let qty = qr.q().transpose() * y;
    let b = qr.r().solve_upper_triangular(&qty).unwrap();
    b.iter().copied().collect()
}

#[test]
fn without_interaction_the_restricted_fit_is_least_squares() {
    let (design, weights) = design_and_weights(&no_interaction(31));
    let oracle = ols_oracle(&design);
    let fit = estimate_without_lags(&design).unwrap();
    let order = [
        Coefficient::Intercept,
        Coefficient::Alpha,
        Coefficient::BetaRoad,
        Coefficient::BetaOcean,
        Coefficient::BetaAirport,
    ];
    for (c, expected) in order.iter().zip(&oracle) {
        let got = fit.params.get(*c);
        assert!((got - expected).abs() <= 1e-6 * expected.abs().max(1e-3), "{c:?}: {got} vs {expected}");
    }
    for c in Coefficient::RHOS {
        assert!(fit.std_error(c).is_none());
        assert_eq!(fit.params.get(c), 0.0);
    }

    let full = estimate_2sls(&design, &weights).unwrap();
    for c in Coefficient::RHOS {
        let t = full.t_value(c).unwrap();
        assert!(t.abs() < 3.0, "{c:?}: t = {t}");
    }
}

#[test]
fn design_has_full_rank_and_finite_values() {
    let (design, _) = design_and_weights(&SyntheticWorldSpec {
        cities_per_country: 100,
        ..Default::default()
    });
    let p = &design.panel;
    assert!(p.dropped.is_empty());
    let x = DMatrix::from_fn(p.len(), 5, |i, j| if j == 4 { p.p_log[i] } else { p.x[(i, j)] });
    assert!(x.iter().all(|v| v.is_finite()));
    assert!(design.dp_next.iter().all(|v| v.is_finite()));
    assert_eq!(x.rank(1e-9), 5);
}

#[test]
fn coefficients_fall_within_three_standard_errors() {
    let spec = SyntheticWorldSpec {
        seed: 32,
        cities_per_country: 100,
        alpha: 0.002,
        ..Default::default()
    };
    let truth = true_growth(&spec);
    let (design, weights) = design_and_weights(&spec);
    assert_eq!(design.n(), 2000);
    let fit = estimate_2sls(&design, &weights).unwrap();
    for c in Coefficient::ALL {
        let z = (fit.params.get(c) - truth.get(c)) / fit.std_error(c).unwrap();
        assert!(z.abs() < 3.0, "{c:?}: z = {z}");
    }
}

/// Median absolute error at a larger sample is below that at a smaller one.
#[test]
fn estimates_are_consistent() {
    let errors = |cities_per_country: usize| -> Vec<Vec<f64>> {
        (0..20)
            .map(|seed| {
                let spec = SyntheticWorldSpec {
                    seed: 100 + seed,
                    cities_per_country,
                    ..Default::default()
                };
                let truth = true_growth(&spec);
                let (design, weights) = design_and_weights(&spec);
                let fit = estimate_2sls(&design, &weights).unwrap();
                Coefficient::ALL.iter().map(|c| (fit.params.get(*c) - truth.get(*c)).abs()).collect()
            })
            .collect()
    };
    let small = errors(100);
    let large = errors(400);
    for (j, c) in Coefficient::ALL.iter().enumerate() {
        let m_small = median(&small.iter().map(|e| e[j]).collect::<Vec<_>>()).unwrap();
        let m_large = median(&large.iter().map(|e| e[j]).collect::<Vec<_>>()).unwrap();
        assert!(m_large < m_small, "{c:?}: {m_large} at 8000 vs {m_small} at 2000");
    }
}
