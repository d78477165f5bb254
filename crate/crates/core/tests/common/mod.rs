#![allow(dead_code)]

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::BFGS;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mrts::LocationSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn uniform_sites(rng: &mut ChaCha8Rng, n: usize, d: usize) -> LocationSet {
    LocationSet::new(DMatrix::from_fn(n, d, |_, _| rng.random::<f64>())).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// `log|Sigma| + tr(Sigma^{-1} S)` by Cholesky, `None` unless positive definite.
pub fn dense_negloglik(sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<f64> {
    let ch = Cholesky::new(sigma.clone())?;
    let logdet: f64 = ch.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Some(logdet + ch.solve(s).trace())
}

/// Moore-Penrose inverse through the SVD with a relative cutoff.
pub fn pinv(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(rel * smax).unwrap()
}

/// `S = Z Z' / T` by explicit loops.
pub fn naive_moment(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = z.shape();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..t {
                acc += z[(i, k)] * z[(j, k)];
            }
            s[(i, j)] = acc / t as f64;
        }
    }
    s
}

/// `int f''(x)^2 dx` for a natural cubic spline with the given sorted knots,
/// from function values only. On each knot interval `f` is cubic, so a central
/// second difference that stays inside the interval is exact, and `f''` is linear.
pub fn spline_roughness(knots: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut total = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        let h = len / 8.0;
        let (x1, x2) = (a + 0.25 * len, a + 0.75 * len);
        let v = f(&[x1 - h, x1, x1 + h, x2 - h, x2, x2 + h]);
        let g1 = (v[0] - 2.0 * v[1] + v[2]) / (h * h);
        let g2 = (v[3] - 2.0 * v[4] + v[5]) / (h * h);
        let slope = (g2 - g1) / (x2 - x1);
        let ga = g1 - slope * (x1 - a);
        let gb = g2 + slope * (b - x2);
        total += len * (ga * ga + ga * gb + gb * gb) / 3.0;
    }
    total
}

/// Twice the negative log-likelihood per replicate under `F L L' F' + (u^2 + eps) I`,
/// parameterized by the packed lower triangle of `L` followed by `u`.
pub struct DenseModel {
    pub f: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub sigma_eps2: f64,
}

impl DenseModel {
    pub fn k(&self) -> usize {
        self.f.ncols()
    }

    pub fn unpack(&self, p: &[f64]) -> (DMatrix<f64>, f64) {
        let k = self.k();
        let mut l = DMatrix::zeros(k, k);
        let mut idx = 0;
        for i in 0..k {
            for j in 0..=i {
                l[(i, j)] = p[idx];
                idx += 1;
            }
        }
        (l, p[idx])
    }

    pub fn sigma(&self, m: &DMatrix<f64>, sigma_xi2: f64) -> DMatrix<f64> {
        let n = self.f.nrows();
        &self.f * m * self.f.transpose() + DMatrix::identity(n, n) * (sigma_xi2 + self.sigma_eps2)
    }

    pub fn value(&self, m: &DMatrix<f64>, sigma_xi2: f64) -> f64 {
        dense_negloglik(&self.sigma(m, sigma_xi2), &self.s).unwrap_or(f64::INFINITY)
    }

    fn value_and_g(&self, p: &[f64]) -> Option<(f64, DMatrix<f64>, DMatrix<f64>, f64)> {
        let (l, u) = self.unpack(p);
        let sigma = self.sigma(&(&l * l.transpose()), u * u);
        let ch = Cholesky::new(sigma)?;
        let inv = ch.inverse();
        let logdet: f64 = ch.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let value = logdet + (&inv * &self.s).trace();
        let g = &inv - &inv * &self.s * &inv;
        Some((value, g, l, u))
    }
}

impl CostFunction for DenseModel {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(self.value_and_g(p).map_or(f64::INFINITY, |v| v.0))
    }
}

impl Gradient for DenseModel {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        let Some((_, g, l, u)) = self.value_and_g(p) else {
            return Ok(vec![0.0; p.len()]);
        };
        let k = self.k();
        let dl = (self.f.transpose() * &g * &self.f) * &l * 2.0;
        let mut out = Vec::with_capacity(p.len());
        for i in 0..k {
            for j in 0..=i {
                out.push(dl[(i, j)]);
            }
        }
        out.push(2.0 * u * g.trace());
        Ok(out)
    }
}

/// Best value of the dense likelihood over `M = L L'`, `sigma_xi2 = u^2`, by BFGS
/// from several random starts.
pub fn brute_force_ml(model: &DenseModel, starts: usize, seed: u64) -> f64 {
    let k = model.k();
    let dim = k * (k + 1) / 2 + 1;
    let mut rng = rng(seed);
    let scale = (model.s.trace() / model.s.nrows() as f64).sqrt().max(1e-3);
    let mut best = f64::INFINITY;
    for _ in 0..starts {
        let p0: Vec<f64> = (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let h0: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1e-2 } else { 0.0 }).collect()).collect();
        let solver = BFGS::new(MoreThuenteLineSearch::new()).with_tolerance_grad(1e-10).unwrap().with_tolerance_cost(1e-14).unwrap();
        let model = DenseModel { f: model.f.clone(), s: model.s.clone(), sigma_eps2: model.sigma_eps2 };
        if let Ok(res) = Executor::new(model, solver).configure(|s| s.param(p0).inv_hessian(h0).max_iters(3000)).run() {
            best = best.min(res.state.get_best_cost());
        }
    }
    best
}

/// A random feasible point `(M, sigma_xi2)` of the model.
pub fn random_candidate(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> (DMatrix<f64>, f64) {
    let l = normal_matrix(rng, k, k) * scale.sqrt();
    let u: f64 = rng.sample(StandardNormal);
    (&l * l.transpose(), u * u * scale)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
