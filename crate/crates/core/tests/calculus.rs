use volterra_games::calculus::*;
use volterra_games::noise::*;
use volterra_games::table::{mean, std_error, variance};

fn brownian_ensemble(cells: usize, paths: usize, seed: u64) -> PathEnsemble {
    let g = build_grid(1.0, cells).unwrap();
    PathEnsemble::simulate(
        &TimeChangeModel::deterministic(1.0, 0.0),
        &g,
        &MarkSet::brownian_only(),
        RandomSeed::new(seed),
        paths,
    )
    .unwrap()
}

fn random_clock_ensemble(cells: usize, paths: usize, seed: u64) -> PathEnsemble {
    let g = build_grid(1.0, cells).unwrap();
    let model = TimeChangeModel {
        brownian: IntensityModel::MeanReverting {
            initial: 1.0,
            speed: 2.0,
            mean: 1.0,
            vol: 0.6,
        },
        jump: IntensityModel::PiecewiseLognormal {
            pieces: 2,
            log_mean: 0.0,
            log_sd: 0.4,
        },
    };
    let marks = MarkSet::from_pairs(&[(0.5, 1.0), (-0.8, 0.5)]).unwrap();
    PathEnsemble::simulate(&model, &g, &marks, RandomSeed::new(seed), paths).unwrap()
}

#[test]
fn isometry_holds_for_polynomial_integrands() {
    let ens = random_clock_ensemble(16, 10_000, 3);
    let marks = ens.marks().len();
    let cells = ens.cells();
    let fields = [
        IntegrandField::deterministic(cells, marks, |_, _| 1.0),
        IntegrandField::deterministic(cells, marks, |j, k| (j as f64 / 16.0) * (1.0 + k as f64)),
        IntegrandField::deterministic(cells, marks, |j, _| 1.0 - (j as f64 / 16.0).powi(2)),
    ];
    for phi in &fields {
        let sq: Vec<f64> = (0..ens.paths())
            .map(|p| ito_integral_on(phi, &ens, p).unwrap().powi(2))
            .collect();
        let sq_phi = IntegrandField::deterministic(cells, marks, |j, k| phi.get(j, k).powi(2));
        let comp: Vec<f64> = (0..ens.paths())
            .map(|p| lambda_integral_on(&sq_phi, &ens, p).unwrap())
            .collect();
        let diff: Vec<f64> = sq.iter().zip(&comp).map(|(a, b)| a - b).collect();
        let z = mean(&diff).abs() / std_error(&diff);
        assert!(z <= 3.0, "isometry gap {z} standard errors");
    }
}

#[test]
fn brownian_martingale_projection() {
    let ens = brownian_ensemble(16, 10_000, 7);
    let n = ens.cells();
    let xi: Vec<f64> = (0..ens.paths()).map(|p| ens.brownian_level(p, n)).collect();
    let level = InformationLevel::new(Flow::F, vec![Feature::BrownianLevel]).unwrap();
    for j in [0, 4, 8, 12] {
        let est = conditional_expectation(&xi, &level, j, &RegressionBasis::default(), &ens, None).unwrap();
        let mse = mean(
            &(0..ens.paths())
                .map(|p| (est[p] - ens.brownian_level(p, j)).powi(2))
                .collect::<Vec<_>>(),
        );
        let tail = 1.0 - j as f64 / 16.0;
        assert!(mse <= 0.05 * tail, "cell {j}: mse {mse}");
    }
}

#[test]
fn constants_are_reproduced_exactly() {
    let ens = brownian_ensemble(8, 500, 1);
    let level = InformationLevel::noise_levels(Flow::F, 0, false);
    let c = vec![2.75; ens.paths()];
    let est = conditional_expectation(&c, &level, 5, &RegressionBasis::default(), &ens, None).unwrap();
    assert_eq!(est, c);
}

#[test]
fn deterministic_integrand_is_recovered() {
    let ens = random_clock_ensemble(8, 10_000, 11);
    let marks = ens.marks().len();
    let phi = IntegrandField::deterministic(8, marks, |j, k| 0.5 + 0.1 * j as f64 - 0.3 * k as f64);
    let xi: Vec<f64> = (0..ens.paths()).map(|p| ito_integral_on(&phi, &ens, p).unwrap()).collect();
    let d = na_derivative(&xi, &ens, &RegressionBasis::default()).unwrap();
    assert!(d.r_squared >= 0.99, "R2 = {}", d.r_squared);
    for p in (0..ens.paths()).step_by(97) {
        for j in 0..8 {
            for k in 0..marks {
                assert!((d.get(p, j, k) - phi.get(j, k)).abs() <= 1e-2);
            }
        }
    }
}

#[test]
fn intensity_measurable_functional_has_zero_derivative() {
    let ens = random_clock_ensemble(8, 10_000, 5);
    let n = ens.cells();
    let xi: Vec<f64> = (0..ens.paths())
        .map(|p| (ens.clock_b(p, n) - 1.0).exp() + ens.clock_h(p, n).sqrt())
        .collect();
    let d = na_derivative(&xi, &ens, &RegressionBasis::default()).unwrap();
    assert!(d.zero_score() <= 3.0, "zero score {}", d.zero_score());
}

#[test]
fn squared_brownian_representation() {
    let ens = brownian_ensemble(8, 10_000, 13);
    let n = ens.cells();
    let xi: Vec<f64> = (0..ens.paths()).map(|p| ens.brownian_level(p, n).powi(2)).collect();
    let d = na_derivative(&xi, &ens, &RegressionBasis::default()).unwrap();
    // Pointwise error is dominated by the cubic terms in the tails, so
    // compare in mean square per cell.
    for j in 0..n {
        let (mut err, mut size) = (0.0, 0.0);
        for p in 0..ens.paths() {
            let target = 2.0 * ens.brownian_level(p, j);
            err += (d.get(p, j, 0) - target).powi(2);
            size += target * target;
        }
        assert!(err.sqrt() <= 0.1 * size.sqrt() + 0.01 * (ens.paths() as f64).sqrt(), "cell {j}");
    }
    assert!((mean(&d.xi0) - 1.0).abs() < 0.05);
}

#[test]
fn duality_constant_and_integral() {
    let ens = random_clock_ensemble(8, 10_000, 17);
    let marks = ens.marks().len();
    let phi = IntegrandField::deterministic(8, marks, |j, k| 1.0 + 0.2 * j as f64 + 0.1 * k as f64);
    let c = vec![1.5; ens.paths()];
    let r = duality_check(&c, std::slice::from_ref(&phi), &ens, &RegressionBasis::default()).unwrap();
    assert!(r.rhs.abs() < 1e-12);
    assert!(r.gap_in_std_errors() <= 3.0);

    let xi: Vec<f64> = (0..ens.paths()).map(|p| ito_integral_on(&phi, &ens, p).unwrap()).collect();
    let r = duality_check(&xi, std::slice::from_ref(&phi), &ens, &RegressionBasis::default()).unwrap();
    assert!(r.gap_in_std_errors() <= 3.0, "{r:?}");
    let sq = IntegrandField::deterministic(8, marks, |j, k| phi.get(j, k).powi(2));
    let expect = mean(&(0..ens.paths()).map(|p| lambda_integral_on(&sq, &ens, p).unwrap()).collect::<Vec<_>>());
    assert!((r.rhs - expect).abs() < 0.02 * expect);
}

#[test]
fn residual_is_orthogonal_to_features() {
    let ens = brownian_ensemble(8, 4_000, 23);
    let n = ens.cells();
    let xi: Vec<f64> = (0..ens.paths()).map(|p| ens.brownian_level(p, n).powi(3).sin()).collect();
    let level = InformationLevel::new(Flow::F, vec![Feature::BrownianLevel]).unwrap();
    let est = conditional_expectation(&xi, &level, 4, &RegressionBasis::default(), &ens, None).unwrap();
    let res: Vec<f64> = xi.iter().zip(&est).map(|(a, b)| a - b).collect();
    let f: Vec<f64> = (0..ens.paths()).map(|p| ens.brownian_level(p, 4)).collect();
    let cov = mean(&res.iter().zip(&f).map(|(a, b)| a * b).collect::<Vec<_>>()) - mean(&res) * mean(&f);
    let corr = cov / (variance(&res) * variance(&f)).sqrt();
    assert!(corr.abs() <= 1e-6, "corr {corr}");
}
