mod common;

use nalgebra::DVector;
use proptest::prelude::*;

use common::{rel_frobenius, rng, spline_roughness, uniform_sites};
use mrts::tps::tps_kernel;
use mrts::{LocationSet, TpsSystem};

#[test]
fn kernel_values() {
    assert!((tps_kernel(&[0.5], &[0.0]).unwrap() - 0.125 / 12.0).abs() < 1e-15);
    assert_eq!(tps_kernel(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(tps_kernel(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    assert!((tps_kernel(&[2.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap() + 0.25).abs() < 1e-15);
    assert!(tps_kernel(&[0.0; 4], &[0.0; 4]).is_err());
}

#[test]
fn points_on_a_line_in_the_plane() {
    // five points with x2 = 0: X = [1, x1, 0] has rank 2 and must be rejected,
    // while a bent line is fine
    let flat = LocationSet::from_rows(&(0..5).map(|i| vec![i as f64, 0.0]).collect::<Vec<_>>());
    assert!(flat.is_err());
    let bent = LocationSet::from_rows(&(0..5).map(|i| vec![i as f64, (i * i) as f64]).collect::<Vec<_>>()).unwrap();
    let sys = TpsSystem::build(bent).unwrap();
    assert!((sys.q() * sys.x()).amax() < 1e-10);
}

#[test]
fn projector_identities() {
    for (seed, d) in [(1, 1), (2, 2), (3, 3)] {
        let sys = TpsSystem::build(uniform_sites(&mut rng(seed), 40, d)).unwrap();
        let q = sys.q();
        assert!(rel_frobenius(&(q * q), q) < 1e-10);
        assert!((q - q.transpose()).amax() < 1e-12);
        assert!((q * sys.x()).amax() < 1e-10);
        assert!((q.trace() - (40 - d - 1) as f64).abs() < 1e-10 * 40.0);
    }
}

#[test]
fn kernel_matrix_is_symmetric_and_penalty_is_psd() {
    let mut r = rng(4);
    let sys = TpsSystem::build(uniform_sites(&mut r, 60, 2)).unwrap();
    assert_eq!(sys.phi(), &sys.phi().transpose());
    let qpq = sys.qphiq();
    let lmax = qpq.clone().symmetric_eigenvalues().amax();
    for _ in 0..100 {
        let a = common::normal_matrix(&mut r, 60, 1);
        let v = (a.transpose() * qpq * &a)[(0, 0)];
        assert!(v >= -1e-10 * a.norm_squared() * lmax);
    }
}

#[test]
fn fast_penalty_assembly_matches_naive_triple_product() {
    for (seed, n, d) in [(5, 50, 1), (6, 200, 2), (7, 120, 3)] {
        let sys = TpsSystem::build(uniform_sites(&mut rng(seed), n, d)).unwrap();
        let naive = sys.q() * sys.phi() * sys.q();
        assert!(rel_frobenius(sys.qphiq(), &naive) < 1e-9, "n={n} d={d}");
    }
}

#[test]
fn roughness_matches_second_derivative_quadrature() {
    let mut r = rng(8);
    let mut xs: Vec<f64> = (0..10).map(|_| rand::Rng::random::<f64>(&mut r)).collect();
    xs.sort_by(f64::total_cmp);
    let locs = LocationSet::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
    let sys = TpsSystem::build(locs).unwrap();
    let alpha: DVector<f64> = sys.q() * common::normal_matrix(&mut r, 10, 1).column(0);
    let j = sys.roughness(&alpha).unwrap();
    let f = |pts: &[f64]| -> Vec<f64> {
        pts.iter().map(|&p| xs.iter().zip(alpha.iter()).map(|(&c, &a)| a * tps_kernel(&[p], &[c]).unwrap()).sum()).collect()
    };
    let oracle = spline_roughness(&xs, f);
    assert!(common::rel_diff(j, oracle) < 1e-4, "{j} vs {oracle}");

    assert_eq!(sys.roughness(&DVector::zeros(10)).unwrap(), 0.0);
    assert!(sys.roughness(&DVector::from_element(10, 1.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projector_annihilates_polynomials(seed in 0u64..1_000, n in 6usize..30, d in 1usize..=3) {
        let sys = TpsSystem::build(uniform_sites(&mut rng(seed), n, d)).unwrap();
        prop_assert!((sys.q() * sys.x()).amax() < 1e-10);
        prop_assert!((sys.qphiq() - sys.qphiq().transpose()).amax() < 1e-12 * sys.qphiq().amax().max(1.0));
    }
}
