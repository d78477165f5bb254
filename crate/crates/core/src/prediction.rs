//! Fixed rank kriging with the fitted low-rank-plus-nugget covariance.
//!
//! With `R = L P` (orthonormal columns) the fitted covariance at the data sites is
//! `Sigma = R diag(d_hat) R' + s I`, `s = sigma_xi2 + sigma_eps2`. Its
//! Moore-Penrose inverse is applied without any `n x n` matrix:
//!
//! ```text
//! s > 0:  Sigma^+ = (1/s) (I - R diag(d_hat / (d_hat + s)) R')
//! s = 0:  Sigma^+ = R diag(d)^+ R'
//! ```

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::basis::SpatialBasis;
use crate::error::{Error, Result};
use crate::estimation::SreFit;
use crate::locations::{coordinate_headers, fmt_f64, row_key};

/// Relative threshold for pseudo-inverting `diag(d)` in the noiseless case.
const PINV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    PositiveNoise,
    ZeroNoise,
}

/// The fitted covariance's pseudo-inverse in factored form, bound to its fit.
#[derive(Debug, Clone)]
pub struct KrigingOperator<'a, B> {
    fit: &'a SreFit<B>,
    /// `L P`, `n x r`
    r: DMatrix<f64>,
    /// `d_hat / (d_hat + s)` when `s > 0`, else `1/d` (or 0 below the floor)
    weights: Vec<f64>,
    noise: f64,
    branch: Branch,
    sites: HashMap<Vec<u64>, usize>,
}

impl<'a, B: SpatialBasis> KrigingOperator<'a, B> {
    pub fn new(fit: &'a SreFit<B>) -> Self {
        let spectra = fit.spectra();
        let r = fit.l_factor() * &spectra.p;
        let noise = fit.total_noise();
        let (branch, weights) = if noise > 0.0 {
            let w = spectra.d_hat.iter().map(|&dh| dh / (dh + noise)).collect();
            (Branch::PositiveNoise, w)
        } else {
            let d_max = spectra.d.iter().fold(0.0_f64, |m, &v| m.max(v));
            let w = spectra
                .d
                .iter()
                .map(|&dk| if dk > PINV_FLOOR * d_max { 1.0 / dk } else { 0.0 })
                .collect();
            (Branch::ZeroNoise, w)
        };
        let sites = fit
            .locations()
            .coords()
            .row_iter()
            .enumerate()
            .map(|(i, row)| (row_key(row.iter().copied()), i))
            .collect();
        KrigingOperator { fit, r, weights, noise, branch, sites }
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// `L P`, `n x r` with orthonormal columns.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Per-direction weights: shrinkage `d_hat/(d_hat+s)` or inverse eigenvalues.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Sigma^+ Z` for an `n x T` matrix, in `O(n r T)`.
    pub fn apply(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.r.nrows();
        if z.nrows() != n {
            return Err(Error::Shape(format!("operand has {} rows, operator is {n}x{n}", z.nrows())));
        }
        let mut proj = self.r.transpose() * z;
        for (mut row, &w) in proj.row_iter_mut().zip(&self.weights) {
            row *= w;
        }
        let low = &self.r * proj;
        Ok(match self.branch {
            Branch::PositiveNoise => (z - low) / self.noise,
            Branch::ZeroNoise => low,
        })
    }

    /// The operator as a dense `n x n` matrix. For checks on small problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.r.nrows();
        self.apply(&DMatrix::identity(n, n)).expect("square identity")
    }

    /// Kriging predictor at `m x d` sites for every column of the `n x T` panel, `m x T`.
    ///
    /// `f(s)' M F' Sigma^+ z + sigma_xi2 [s = s_i] (Sigma^+ z)_i`, where the
    /// indicator requires a bitwise coordinate match with control point `s_i`.
    pub fn krige(&self, z: &DMatrix<f64>, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let fit = self.fit;
        if sites.ncols() != fit.basis().dim() {
            return Err(Error::Shape(format!(
                "prediction sites have {} columns, model is {}-dimensional",
                sites.ncols(),
                fit.basis().dim()
            )));
        }
        let w = self.apply(z)?;
        let coef = fit.m_hat() * (fit.design().transpose() * &w);
        // streamed in row blocks so only a block of basis values is held at once
        let block = 512;
        let starts: Vec<usize> = (0..sites.nrows()).step_by(block).collect();
        let parts: Vec<DMatrix<f64>> = starts
            .par_iter()
            .map(|&start| {
                let len = block.min(sites.nrows() - start);
                let f = fit.basis().evaluate(&sites.rows(start, len).into_owned())?;
                let mut out = f * &coef;
                if fit.sigma_xi2() > 0.0 {
                    for i in 0..len {
                        let key = row_key(sites.row(start + i).iter().copied());
                        if let Some(&j) = self.sites.get(&key) {
                            for t in 0..out.ncols() {
                                out[(i, t)] += fit.sigma_xi2() * w[(j, t)];
                            }
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(sites.nrows(), z.ncols());
        for (start, part) in starts.iter().zip(parts) {
            out.rows_mut(*start, part.nrows()).copy_from(&part);
        }
        Ok(out)
    }
}

/// Convenience wrapper around [`KrigingOperator::krige`].
pub fn krige<B: SpatialBasis>(fit: &SreFit<B>, z: &DMatrix<f64>, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    KrigingOperator::new(fit).krige(z, sites)
}

/// Regular lattice on `[lo, hi]^d` with `points` nodes per axis, first axis fastest.
pub fn regular_grid(d: usize, points: usize, lo: f64, hi: f64) -> Result<DMatrix<f64>> {
    if !(1..=3).contains(&d) {
        return Err(Error::Dimension(d));
    }
    if points < 2 || lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidParameter(format!("grid needs at least 2 points on an interval lo < hi, got {points} on [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let node = |i: usize| if i == points - 1 { hi } else { lo + i as f64 * step };
    let m = points.pow(d as u32);
    Ok(DMatrix::from_fn(m, d, |i, j| node((i / points.pow(j as u32)) % points)))
}

/// Writes `x1..xd, t, yhat` rows, `t` counted from 1.
pub fn write_predictions_csv<W: Write>(writer: W, sites: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<()> {
    if sites.nrows() != yhat.nrows() {
        return Err(Error::Shape("prediction rows do not match sites".into()));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = coordinate_headers(sites.ncols());
    header.push("t".into());
    header.push("yhat".into());
    wtr.write_record(&header)?;
    for t in 0..yhat.ncols() {
        for i in 0..sites.nrows() {
            let mut rec: Vec<String> = sites.row(i).iter().map(|&v| fmt_f64(v)).collect();
            rec.push((t + 1).to_string());
            rec.push(fmt_f64(yhat[(i, t)]));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
