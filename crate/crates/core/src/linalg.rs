//! Small dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, SymmetricEigen};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrized(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// (A + A') / 2
pub fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Makes the entry of largest magnitude in every column positive.
///
/// Ties in magnitude resolve to the first such entry.
pub fn fix_column_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Factorization of a PSD Gram matrix restricted to its numerical range.
///
/// Holds `U_r` and the retained eigenvalues `g_r`, so that
/// `G^{+1/2} = U_r diag(g_r^{-1/2}) U_r'`.
#[derive(Debug, Clone)]
pub struct GramRoot {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
    pub full_size: usize,
}

impl GramRoot {
    /// Keeps eigenpairs with `g > floor * g_max`.
    pub fn new(gram: &DMatrix<f64>, floor: f64) -> Self {
        let (values, vectors) = sym_eigen_desc(gram);
        let gmax = values.first().copied().unwrap_or(0.0).max(0.0);
        let rank = values.iter().take_while(|&&g| gmax > 0.0 && g > floor * gmax).count();
        GramRoot {
            vectors: vectors.columns(0, rank).into_owned(),
            values: values[..rank].to_vec(),
            full_size: gram.nrows(),
        }
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// `U_r diag(g_r^{-1/2})`, a K x r matrix.
    pub fn scaled_inverse_root(&self) -> DMatrix<f64> {
        let mut out = self.vectors.clone();
        for (mut col, g) in out.column_iter_mut().zip(&self.values) {
            col /= g.sqrt();
        }
        out
    }

    /// `G^{+1/2}` as a K x K matrix.
    pub fn inverse_sqrt(&self) -> DMatrix<f64> {
        let w = self.scaled_inverse_root();
        &w * self.vectors.transpose()
    }

    /// `G^{1/2}` on the retained range.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let mut w = self.vectors.clone();
        for (mut col, g) in w.column_iter_mut().zip(&self.values) {
            col *= g.sqrt();
        }
        &w * self.vectors.transpose()
    }
}

/// Log-determinant of a symmetric positive definite matrix through Cholesky.
pub fn spd_logdet(a: &DMatrix<f64>) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(a.clone())?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
