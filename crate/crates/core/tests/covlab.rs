mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{normal_matrix, rel_diff, rng};
use mrts::covlab::{
    best_m_ise, bisquare, ise, BisquareBasis, ConventionalTpsBasis, IseProblem, QuadratureGrid, QuadratureRule,
    ReferenceCovariance, EXAMPLE1_WEIGHTS,
};
use mrts::{Error, LocationSet, MrtsBasis, SpatialBasis, TpsSystem};

fn example1_m() -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(&EXAMPLE1_WEIGHTS))
}

fn line_grid(m: usize) -> QuadratureGrid {
    QuadratureGrid::tensor(1, m, QuadratureRule::Trapezoid).unwrap()
}

fn best_ise(target: &ReferenceCovariance, grid: QuadratureGrid, basis: &dyn SpatialBasis) -> f64 {
    let p = IseProblem::new(target, grid).unwrap();
    p.best(&p.tabulate(basis).unwrap()).unwrap().1
}

#[test]
fn bisquare_values() {
    assert_eq!(bisquare(&[0.3], &[0.3], 0.5).unwrap(), 1.0);
    assert_eq!(bisquare(&[0.8], &[0.3], 0.5).unwrap(), 0.0);
    assert_eq!(bisquare(&[1.2], &[0.3], 0.5).unwrap(), 0.0);
    let h = 0.5 / 2f64.sqrt();
    assert!((bisquare(&[0.3 + h, 0.0], &[0.3, 0.0], 0.5).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn true_basis_and_weights_give_zero_error() {
    let grid = line_grid(201);
    let f = BisquareBasis::example1().evaluate(grid.points()).unwrap();
    assert!(ise(&f, &example1_m(), &ReferenceCovariance::Example1, &grid).unwrap() < 1e-10);
}

#[test]
fn zero_weights_give_the_integrated_square_of_the_target() {
    let grid = line_grid(101);
    let target = ReferenceCovariance::DeformedExponential;
    let f = BisquareBasis::example1().evaluate(grid.points()).unwrap();
    let got = ise(&f, &DMatrix::zeros(6, 6), &target, &grid).unwrap();
    // independent composite trapezoid of C0^2 over the unit square
    let m = 101;
    let h = 1.0 / (m - 1) as f64;
    let wt = |i: usize| if i == 0 || i == m - 1 { h / 2.0 } else { h };
    let mut oracle = 0.0;
    for i in 0..m {
        for j in 0..m {
            let c = target.eval(&[i as f64 * h], &[j as f64 * h]);
            oracle += wt(i) * wt(j) * c * c;
        }
    }
    assert!(rel_diff(got, oracle) < 1e-12);
}

#[test]
fn example1_weights_are_recovered() {
    let grid = line_grid(201);
    let f = BisquareBasis::example1().evaluate(grid.points()).unwrap();
    let m = best_m_ise(&f, &ReferenceCovariance::Example1, &grid).unwrap();
    assert!((m - example1_m()).amax() < 1e-6);
}

#[test]
fn supersets_of_the_true_basis_reach_zero() {
    let grid = line_grid(201);
    assert!(best_ise(&ReferenceCovariance::Example1, grid.clone(), &BisquareBasis::radius_family(0.5)) < 1e-8);
    assert!(best_ise(&ReferenceCovariance::Example1, grid, &BisquareBasis::shift_family(0.0)) < 1e-8);
}

#[test]
fn zero_target_gives_zero_weights() {
    let grid = line_grid(51);
    let p = IseProblem::from_target(grid.clone(), DMatrix::zeros(51, 51)).unwrap();
    let f = BisquareBasis::radius_family(0.4).evaluate(grid.points()).unwrap();
    assert_eq!(p.best_m(&f).unwrap().amax(), 0.0);
}

#[test]
fn coarse_and_fine_quadrature_agree() {
    let bases = [
        BisquareBasis::radius_family(0.35),
        BisquareBasis::radius_family(0.8),
        BisquareBasis::shift_family(-0.1),
        BisquareBasis::misplaced_fine(),
        BisquareBasis::misplaced_coarse(),
    ];
    for b in &bases {
        let coarse = best_ise(&ReferenceCovariance::Example1, line_grid(101), b);
        let fine = best_ise(&ReferenceCovariance::Example1, line_grid(201), b);
        assert!(rel_diff(coarse, fine) < 0.02, "{coarse} vs {fine}");
    }
}

#[test]
fn projection_beats_psd_perturbations() {
    let grid = line_grid(81);
    let basis = BisquareBasis::new(DMatrix::from_column_slice(3, 1, &[0.2, 0.5, 0.8]), vec![0.4; 3]).unwrap();
    let f = basis.evaluate(grid.points()).unwrap();
    let mut r = rng(1);
    for _ in 0..5 {
        // an indefinite 3x3 target in the span of the basis plus an off-span part
        let a = normal_matrix(&mut r, 3, 3);
        let t = (&a + a.transpose()) * 2.0;
        let target = &f * &t * f.transpose() + DMatrix::from_fn(81, 81, |i, j| (-((i as f64 - j as f64) / 20.0).abs()).exp());
        let p = IseProblem::from_target(grid.clone(), target).unwrap();
        let (m, best) = p.best(&f).unwrap();
        assert!(m.clone().symmetric_eigenvalues().min() >= -1e-10 * m.amax());
        for _ in 0..100 {
            let e = normal_matrix(&mut r, 3, 3) * 0.3;
            let perturbed = &m + &e * e.transpose();
            assert!(best <= p.ise(&f, &perturbed).unwrap() + 1e-12);
            let sym = &m + (&e + e.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            let clipped = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0))) * eig.eigenvectors.transpose();
            assert!(best <= p.ise(&f, &clipped).unwrap() + 1e-12);
        }
    }
}

#[test]
fn projection_is_idempotent() {
    let grid = line_grid(201);
    let f = BisquareBasis::radius_family(0.3).evaluate(grid.points()).unwrap();
    let m = best_m_ise(&f, &ReferenceCovariance::DeformedExponential, &grid).unwrap();
    let again = IseProblem::from_target(grid, &f * &m * f.transpose()).unwrap().best_m(&f).unwrap();
    assert!((again - &m).amax() < 1e-8 * m.amax().max(1.0));
}

#[test]
fn collinear_functions_are_rejected() {
    let grid = line_grid(51);
    let b = BisquareBasis::new(DMatrix::from_column_slice(3, 1, &[0.2, 0.5, 0.5]), vec![0.3; 3]).unwrap();
    let p = IseProblem::new(&ReferenceCovariance::Example1, grid).unwrap();
    assert!(matches!(p.best_m(&p.tabulate(&b).unwrap()), Err(Error::CollinearBasis)));
}

#[test]
fn nested_basis_error_does_not_increase() {
    let grid = QuadratureGrid::tensor(2, 21, QuadratureRule::Trapezoid).unwrap();
    let p = IseProblem::new(&ReferenceCovariance::Exponential2d, grid).unwrap();
    let locs = LocationSet::from_rows(&(0..100).map(|i| vec![(i % 10) as f64 / 9.0 + 0.01 * (i / 10) as f64, (i / 10) as f64 / 9.0]).collect::<Vec<_>>())
        .unwrap();
    let basis = MrtsBasis::compute(&TpsSystem::build(locs).unwrap(), 40).unwrap();
    let f = p.tabulate(&basis).unwrap();
    let mut last = f64::INFINITY;
    for k in [3, 6, 10, 15, 22, 30, 40] {
        let e = p.best(&f.columns(0, k).into_owned()).unwrap().1;
        assert!(e <= last + 1e-10, "K={k}: {e} > {last}");
        last = e;
    }
}

#[test]
fn conventional_basis_counts() {
    for l in [3, 5, 8] {
        let b = ConventionalTpsBasis::new(l).unwrap();
        assert_eq!(b.nominal_count(), l * l + 3);
        assert_eq!(b.len(), l * l);
        let grid = QuadratureGrid::tensor(2, 9, QuadratureRule::Uniform).unwrap();
        let f = b.evaluate(grid.points()).unwrap();
        assert_eq!(f.ncols(), l * l);
    }
}

#[test]
fn reference_covariances_are_symmetric_and_peaked() {
    for c in [ReferenceCovariance::Example1, ReferenceCovariance::DeformedExponential] {
        let pts = line_grid(30);
        let mat = c.matrix(pts.points(), pts.points()).unwrap();
        assert!((&mat - mat.transpose()).amax() < 1e-12);
        assert!(mat.clone().symmetric_eigenvalues().min() > -1e-8 * mat.amax());
    }
    let e = ReferenceCovariance::Exponential2d;
    assert_eq!(e.eval(&[0.3, 0.3], &[0.3, 0.3]), 20.0);
    assert!((e.eval(&[0.0, 0.0], &[0.3, 0.4]) - 20.0 * (-0.2f64).exp()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimal_error_is_nonnegative_and_below_zero_weights(r in 0.2f64..1.0, m in 21usize..81) {
        let grid = line_grid(m);
        let p = IseProblem::new(&ReferenceCovariance::Example1, grid).unwrap();
        let f = p.tabulate(&BisquareBasis::radius_family(r)).unwrap();
        let (_, e) = p.best(&f).unwrap();
        let zero = p.ise(&f, &DMatrix::zeros(6, 6)).unwrap();
        prop_assert!(e >= -1e-12);
        prop_assert!(e <= zero + 1e-12);
    }
}
