mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use common::{normal_matrix, pinv, rel_frobenius, rng, uniform_sites};
use mrts::prediction::{krige, regular_grid, Branch, KrigingOperator};
use mrts::{fit_ml, DataPanel, LocationSet, MrtsBasis, SpatialBasis, SreFit, TpsSystem};

fn setup(seed: u64, n: usize, k: usize, t: usize, noise: f64) -> (LocationSet, MrtsBasis, DataPanel) {
    let mut r = rng(seed);
    let locs = uniform_sites(&mut r, n, 2);
    let basis = MrtsBasis::compute(&TpsSystem::build(locs.clone()).unwrap(), k).unwrap();
    let f = basis.design(&locs).unwrap();
    let z = &f * normal_matrix(&mut r, k, t) * 2.0 + normal_matrix(&mut r, n, t) * noise;
    let panel = DataPanel::new(locs.clone(), z).unwrap();
    (locs, basis, panel)
}

#[test]
fn operator_is_the_pseudo_inverse_with_noise() {
    let (_, basis, panel) = setup(1, 30, 5, 12, 1.0);
    let fit = fit_ml(&panel, basis, 0.8).unwrap();
    let op = KrigingOperator::new(&fit);
    assert_eq!(op.branch(), Branch::PositiveNoise);
    let dense = pinv(&fit.sigma_hat(), 1e-13);
    assert!((op.to_dense() - &dense).norm() < 1e-8, "{}", (op.to_dense() - &dense).norm());
}

#[test]
fn operator_is_the_pseudo_inverse_without_noise() {
    let (_, basis, panel) = setup(2, 30, 5, 12, 0.0);
    let fit = fit_ml(&panel, basis, 0.0).unwrap();
    assert_eq!(fit.total_noise(), 0.0);
    let op = KrigingOperator::new(&fit);
    assert_eq!(op.branch(), Branch::ZeroNoise);
    let sigma = fit.sigma_hat();
    let dense = pinv(&sigma, 1e-10);
    assert!((op.to_dense() - &dense).norm() < 1e-8, "{}", (op.to_dense() - &dense).norm());

    // vectors orthogonal to the column space of F are annihilated
    let f = fit.design();
    let v = normal_matrix(&mut rng(3), 30, 4);
    let proj = f * f.clone().svd(true, true).solve(&v, 1e-14).unwrap();
    let orth = v - proj;
    assert!(op.apply(&orth).unwrap().amax() < 1e-8 * orth.amax());
}

#[test]
fn polynomial_only_model_shrinks_three_directions() {
    let (_, basis, panel) = setup(4, 25, 3, 10, 1.0);
    let fit = fit_ml(&panel, basis, 0.5).unwrap();
    let op = KrigingOperator::new(&fit);
    let s = fit.total_noise();
    let r = op.factor();
    assert_eq!(r.ncols(), 3);
    let w: Vec<f64> = fit.spectra().d_hat.iter().map(|&d| d / (d + s)).collect();
    let expected = (DMatrix::identity(25, 25) - r * DMatrix::from_diagonal(&common::dvec(&w)) * r.transpose()) / s;
    assert!((op.to_dense() - expected).amax() < 1e-12);
    assert!(rel_frobenius(&op.to_dense(), &pinv(&fit.sigma_hat(), 1e-13)) < 1e-10);
}

#[test]
fn noiseless_prediction_interpolates() {
    let (locs, basis, panel) = setup(5, 40, 8, 10, 0.0);
    let fit = fit_ml(&panel, basis, 0.0).unwrap();
    let yhat = krige(&fit, panel.values(), locs.coords()).unwrap();
    assert!((yhat - panel.values()).amax() < 1e-8 * panel.values().amax());
}

#[test]
fn zero_data_predict_zero() {
    let (_, basis, panel) = setup(6, 20, 5, 3, 1.0);
    let fit = fit_ml(&panel, basis, 1.0).unwrap();
    let grid = regular_grid(2, 7, 0.0, 1.0).unwrap();
    assert_eq!(krige(&fit, &DMatrix::zeros(20, 2), &grid).unwrap(), DMatrix::zeros(49, 2));
}

#[test]
fn matches_dense_simple_kriging() {
    let (locs, basis, panel) = setup(7, 35, 6, 8, 1.5);
    let fit = fit_ml(&panel, basis, 0.5).unwrap();
    assert!(fit.sigma_xi2() > 0.0, "nugget should be active in this instance");
    let mut r = rng(8);
    let mut sites = DMatrix::from_fn(20, 2, |_, _| r.random::<f64>());
    // include some control points so the nugget term is exercised
    for (i, j) in [(0, 3), (7, 11), (19, 34)] {
        sites.row_mut(i).copy_from(&locs.coords().row(j));
    }
    let c = fit.covariance_matrix(&sites, locs.coords()).unwrap();
    let dense = c * pinv(&fit.sigma_hat(), 1e-13) * panel.values();
    let fast = krige(&fit, panel.values(), &sites).unwrap();
    assert!((fast - &dense).amax() < 1e-8 * dense.amax().max(1.0));
}

#[test]
fn known_parameters_model_krigs_like_the_dense_formula() {
    let (locs, basis, panel) = setup(9, 25, 4, 5, 1.0);
    let m = DMatrix::from_diagonal(&common::dvec(&[3.0, 1.0, 0.5, 2.0]));
    let model = SreFit::with_parameters(&panel, basis, &m, 0.2, 0.6, &Default::default()).unwrap();
    let sites = regular_grid(2, 6, 0.0, 1.0).unwrap();
    let c = model.covariance_matrix(&sites, locs.coords()).unwrap();
    let dense = c * pinv(&model.sigma_hat(), 1e-13) * panel.values();
    assert!((krige(&model, panel.values(), &sites).unwrap() - &dense).amax() < 1e-8 * dense.amax());
}

#[test]
fn sites_are_checked() {
    let (_, basis, panel) = setup(10, 20, 4, 2, 1.0);
    let fit = fit_ml(&panel, basis, 1.0).unwrap();
    assert!(krige(&fit, panel.values(), &DMatrix::zeros(3, 3)).is_err());
    assert!(krige(&fit, &DMatrix::zeros(19, 2), &DMatrix::zeros(3, 2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prediction_is_linear_in_the_data(seed in 0u64..5_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (_, basis, panel) = setup(seed, 25, 6, 6, 1.0);
        let fit = fit_ml(&panel, basis, 0.7).unwrap();
        let mut r = rng(seed + 1);
        let z1 = normal_matrix(&mut r, 25, 2);
        let z2 = normal_matrix(&mut r, 25, 2);
        let sites = DMatrix::from_fn(9, 2, |_, _| r.random::<f64>());
        let op = KrigingOperator::new(&fit);
        let lhs = op.krige(&(&z1 * a + &z2 * b), &sites).unwrap();
        let rhs = op.krige(&z1, &sites).unwrap() * a + op.krige(&z2, &sites).unwrap() * b;
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn moore_penrose_axioms(seed in 0u64..5_000, n in 10usize..50, k in 3usize..8, noiseless in any::<bool>()) {
        let noise = if noiseless { 0.0 } else { 1.0 };
        let (_, basis, panel) = setup(seed, n, k, 12, noise);
        let fit = fit_ml(&panel, basis, if noiseless { 0.0 } else { 0.5 }).unwrap();
        let sigma = fit.sigma_hat();
        let plus = KrigingOperator::new(&fit).to_dense();
        prop_assert!(rel_frobenius(&(&sigma * &plus * &sigma), &sigma) < 1e-8);
        prop_assert!(rel_frobenius(&(&plus * &sigma * &plus), &plus) < 1e-8);
        let sp = &sigma * &plus;
        prop_assert!((&sp - sp.transpose()).norm() < 1e-8 * sp.norm());
    }
}
