//! Leading eigenpairs of symmetric positive semidefinite operators.
//!
//! Small problems go through a dense symmetric eigendecomposition. Larger ones
//! use Lanczos with full reorthogonalization: the Krylov basis is extended in
//! blocks until every requested Ritz pair satisfies
//! `|A v - theta v| <= tol * theta_1`, then the residuals are checked against
//! the operator itself.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{fix_column_signs, sym_eigen_desc};

/// A symmetric linear operator given through matrix-vector products.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy)]
pub struct EigenConfig {
    /// Problems up to this size are solved densely.
    pub dense_limit: usize,
    /// Residual tolerance relative to the leading eigenvalue.
    pub tolerance: f64,
    /// Seed of the Lanczos start vector.
    pub seed: u64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig { dense_limit: 500, tolerance: 1e-8, seed: 0x5eed_1a7c }
    }
}

/// Leading eigenpairs, eigenvalues descending, eigenvectors as orthonormal columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPairs {
    /// Largest `|A v - lambda v|` over the stored pairs.
    pub fn max_residual<A: SymmetricOperator + ?Sized>(&self, op: &A) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(j, &lam)| {
                let v = self.vectors.column(j).into_owned();
                (op.apply(&v) - v * lam).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Top `k` eigenpairs of a dense symmetric matrix, dispatching on size.
///
/// Eigenvector signs are normalized so the largest-magnitude entry is positive.
pub fn top_eigenpairs(a: &DMatrix<f64>, k: usize, cfg: &EigenConfig) -> Result<EigenPairs> {
    let mut pairs = if a.nrows() <= cfg.dense_limit || k == a.nrows() {
        dense_top(a, k)
    } else {
        lanczos_top(a, k, cfg)?
    };
    fix_column_signs(&mut pairs.vectors);
    Ok(pairs)
}

/// Full dense decomposition truncated to the leading `k` pairs.
pub fn dense_top(a: &DMatrix<f64>, k: usize) -> EigenPairs {
    let (values, vectors) = sym_eigen_desc(a);
    let k = k.min(values.len());
    EigenPairs { values: values[..k].to_vec(), vectors: vectors.columns(0, k).into_owned() }
}

/// Lanczos with full reorthogonalization for the `k` largest eigenpairs.
pub fn lanczos_top<A: SymmetricOperator + ?Sized>(op: &A, k: usize, cfg: &EigenConfig) -> Result<EigenPairs> {
    let n = op.dim();
    if k == 0 {
        return Ok(EigenPairs { values: Vec::new(), vectors: DMatrix::zeros(n, 0) });
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    // beta[j] couples basis[j] and basis[j + 1]
    let mut beta: Vec<f64> = Vec::new();

    let mut target = (2 * k + 20).min(n);
    let mut next = random_unit(n, &mut rng);

    loop {
        while basis.len() < target {
            let j = basis.len();
            basis.push(next.clone());
            let mut w = op.apply(&basis[j]);
            let a = w.dot(&basis[j]);
            alpha.push(a);
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for v in &basis {
                    let c = w.dot(v);
                    w.axpy(-c, v, 1.0);
                }
            }
            let b = w.norm();
            let scale = alpha.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            if basis.len() == n {
                beta.push(0.0);
                break;
            }
            if b <= 1e-13 * scale {
                // invariant subspace: restart with a fresh direction orthogonal to the basis
                beta.push(0.0);
                next = fresh_direction(&basis, n, &mut rng);
            } else {
                beta.push(b);
                next = w / b;
            }
        }

        let m = basis.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (theta, y) = sym_eigen_desc(&t);
        let lead = theta[0].abs().max(f64::MIN_POSITIVE);
        let b_last = beta[m - 1];
        let mut residual = (0..k).map(|i| (b_last * y[(m - 1, i)]).abs()).fold(0.0, f64::max);

        // a breakdown on the last step leaves the complement of the Krylov space unexplored
        let broke_down = b_last == 0.0 && m < n;
        if (!broke_down && residual <= cfg.tolerance * lead) || m == n {
            let mut vectors = DMatrix::zeros(n, k);
            for (j, v) in basis.iter().enumerate() {
                for i in 0..k {
                    vectors.column_mut(i).axpy(y[(j, i)], v, 1.0);
                }
            }
            for mut col in vectors.column_iter_mut() {
                let nrm = col.norm();
                col /= nrm;
            }
            let pairs = EigenPairs { values: theta[..k].to_vec(), vectors };
            let true_residual = pairs.max_residual(op);
            if true_residual <= cfg.tolerance * lead {
                return Ok(pairs);
            }
            if m == n {
                return Err(Error::NoConvergence { steps: m, residual: true_residual });
            }
            residual = true_residual;
        }
        if m == n {
            return Err(Error::NoConvergence { steps: m, residual });
        }
        target = (target + k + 20).min(n);
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let nrm = v.norm();
    v / nrm
}

fn fresh_direction(basis: &[DVector<f64>], n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let mut v = random_unit(n, rng);
        for _ in 0..2 {
            for b in basis {
                let c = v.dot(b);
                v.axpy(-c, b, 1.0);
            }
        }
        let nrm = v.norm();
        if nrm > 1e-8 {
            return v / nrm;
        }
    }
}
