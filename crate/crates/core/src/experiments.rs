//! Seeded simulations, competitor fits, evaluation metrics and the named
//! reproduction runs.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with the stream
//! set to the replicate index, so every replicate is reproducible on its own
//! and results do not depend on scheduling.

use std::io::Write;
use std::path::Path;

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{MrtsBasis, SpatialBasis};
use crate::covlab::{
    BisquareBasis, ConventionalTpsBasis, IseProblem, QuadratureGrid, QuadratureRule, ReferenceCovariance,
};
use crate::error::{Error, Result};
use crate::estimation::{fit_ml_with, select_k_with_basis, DataPanel, FitOptions, RankPolicy, SreFit};
use crate::linalg::frobenius;
use crate::locations::{fmt_f64, LocationSet};
use crate::prediction::{regular_grid, KrigingOperator};
use crate::tps::{euclid, TpsSystem};

/// `f1(s) = cos(pi |s - (0, 1)|)`, `f2(s) = cos(2 pi |s - (3/4, 1/4)|)` on `[0, 1]^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TwoCosineBasis;

/// Variances of the two random effects.
pub const TWO_COSINE_VARIANCES: [f64; 2] = [25.0, 9.0];

impl SpatialBasis for TwoCosineBasis {
    fn len(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if sites.ncols() != 2 {
            return Err(Error::Shape(format!("sites have {} columns, basis is 2-dimensional", sites.ncols())));
        }
        use std::f64::consts::PI;
        Ok(DMatrix::from_fn(sites.nrows(), 2, |i, j| {
            let s = [sites[(i, 0)], sites[(i, 1)]];
            if j == 0 {
                (PI * euclid(&s, &[0.0, 1.0])).cos()
            } else {
                (2.0 * PI * euclid(&s, &[0.75, 0.25])).cos()
            }
        }))
    }
}

/// The process generating the smooth field `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    /// `y = w1 f1 + w2 f2` with `(w1, w2) ~ N(0, diag(25, 9))`.
    TwoCosine,
    /// Gaussian field with `sill * exp(-h / range)`.
    Exponential { sill: f64, range: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    UniformRandom,
    /// Regular lattice on `[0, 1]^2`; `n` must be a square.
    FixedGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub truth: Truth,
    pub n: usize,
    pub replicates: usize,
    pub sigma_eps2: f64,
    pub sampling: Sampling,
    pub seed: u64,
    /// RNG stream, normally the replicate index.
    #[serde(default)]
    pub stream: u64,
    /// Evaluation lattice points per axis for the noiseless field; 0 for none.
    #[serde(default = "default_eval_grid")]
    pub eval_grid: usize,
}

fn default_eval_grid() -> usize {
    41
}

impl SimulationSpec {
    /// `n = 100`, `T = 50`, `sigma_eps2 = 3`, uniform random sites, two-cosine truth.
    pub fn two_cosine(seed: u64, stream: u64) -> Self {
        SimulationSpec {
            truth: Truth::TwoCosine,
            n: 100,
            replicates: 50,
            sigma_eps2: 3.0,
            sampling: Sampling::UniformRandom,
            seed,
            stream,
            eval_grid: 41,
        }
    }
}

/// A simulated panel plus the noiseless field on the evaluation grid.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub panel: DataPanel,
    /// noiseless `y` at the sites, `n x T`
    pub truth_at_sites: DMatrix<f64>,
    pub grid: QuadratureGrid,
    /// noiseless `y` on the grid points, `m x T`
    pub truth_on_grid: DMatrix<f64>,
}

/// The deterministic generator for `(seed, stream)`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill keeps the draw order independent of nalgebra internals
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Draws sites, effects and noise for one replicate.
pub fn simulate_panel(spec: &SimulationSpec) -> Result<SimulatedData> {
    if spec.n == 0 || spec.replicates == 0 {
        return Err(Error::InvalidParameter("n and T must be at least 1".into()));
    }
    if spec.sigma_eps2 < 0.0 {
        return Err(Error::InvalidParameter("sigma_eps2 must be nonnegative".into()));
    }
    let mut rng = replicate_rng(spec.seed, spec.stream);
    let sites = match spec.sampling {
        Sampling::UniformRandom => {
            let mut m = DMatrix::zeros(spec.n, 2);
            for i in 0..spec.n {
                for j in 0..2 {
                    m[(i, j)] = rng.random::<f64>();
                }
            }
            m
        }
        Sampling::FixedGrid => {
            let side = (spec.n as f64).sqrt().round() as usize;
            if side * side != spec.n {
                return Err(Error::InvalidParameter(format!("fixed-grid sampling needs a square n, got {}", spec.n)));
            }
            regular_grid(2, side, 0.0, 1.0)?
        }
    };
    let locs = LocationSet::new(sites)?;
    let grid = if spec.eval_grid > 0 {
        QuadratureGrid::tensor(2, spec.eval_grid, QuadratureRule::Trapezoid)?
    } else {
        QuadratureGrid::tensor(2, 1, QuadratureRule::Midpoint)?
    };
    let grid_pts = if spec.eval_grid > 0 { grid.points().clone() } else { DMatrix::zeros(0, 2) };
    let t = spec.replicates;

    let (y_sites, y_grid) = match &spec.truth {
        Truth::TwoCosine => {
            let w = normals(&mut rng, 2, t);
            let scale = DMatrix::from_diagonal(&DVector::from_iterator(2, TWO_COSINE_VARIANCES.iter().map(|v| v.sqrt())));
            let w = scale * w;
            let b = TwoCosineBasis;
            (b.evaluate(locs.coords())? * &w, b.evaluate(&grid_pts)? * &w)
        }
        Truth::Exponential { sill, range } => {
            let all = DMatrix::from_fn(spec.n + grid_pts.nrows(), 2, |i, j| {
                if i < spec.n {
                    locs.coords()[(i, j)]
                } else {
                    grid_pts[(i - spec.n, j)]
                }
            });
            let cov = ReferenceCovariance::Exponential { sill: *sill, range: *range }.matrix(&all, &all)?;
            let chol = cholesky_with_jitter(cov)?;
            let y = chol * normals(&mut rng, all.nrows(), t);
            (y.rows(0, spec.n).into_owned(), y.rows(spec.n, grid_pts.nrows()).into_owned())
        }
    };
    let noise = normals(&mut rng, spec.n, t) * spec.sigma_eps2.sqrt();
    let panel = DataPanel::new(locs, &y_sites + noise)?;
    Ok(SimulatedData { panel, truth_at_sites: y_sites, grid, truth_on_grid: y_grid })
}

/// Lower Cholesky factor, with a tiny diagonal jitter if the matrix is numerically singular.
fn cholesky_with_jitter(mut a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = a.diagonal().max().max(f64::MIN_POSITIVE);
    for attempt in 0..6 {
        if let Some(c) = Cholesky::new(a.clone()) {
            return Ok(c.l());
        }
        let jitter = scale * 1e-12 * 10f64.powi(attempt);
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
    }
    Err(Error::NotPositiveDefinite("simulation covariance".into()))
}

/// ML fit of `sill * exp(-h / range) + sigma_eps2 I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub sill: f64,
    pub range: f64,
    pub sigma_eps2: f64,
    /// `T log|Sigma| + T tr(S Sigma^{-1})`
    pub negloglik: f64,
    pub converged: bool,
    pub at_bound: bool,
}

pub const SILL_BOUNDS: (f64, f64) = (1e-8, 1e6);
pub const RANGE_BOUNDS: (f64, f64) = (1e-3, 1e2);

struct ExpLikelihood<'a> {
    dist: DMatrix<f64>,
    moment: &'a DMatrix<f64>,
    replicates: f64,
    sigma_eps2: f64,
}

impl ExpLikelihood<'_> {
    fn clamp(p: &[f64]) -> (f64, f64) {
        let sill = p[0].exp().clamp(SILL_BOUNDS.0, SILL_BOUNDS.1);
        let range = p[1].exp().clamp(RANGE_BOUNDS.0, RANGE_BOUNDS.1);
        (sill, range)
    }

    fn value(&self, sill: f64, range: f64) -> f64 {
        let n = self.dist.nrows();
        let sigma = DMatrix::from_fn(n, n, |i, j| {
            sill * (-self.dist[(i, j)] / range).exp() + if i == j { self.sigma_eps2 } else { 0.0 }
        });
        match Cholesky::new(sigma) {
            Some(c) => {
                let logdet = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                self.replicates * (logdet + c.solve(self.moment).trace())
            }
            None => f64::INFINITY,
        }
    }
}

impl CostFunction for ExpLikelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (sill, range) = Self::clamp(p);
        // a small pull back into the box keeps the simplex from drifting along flat clamped regions
        let excess = (p[0] - sill.ln()).abs() + (p[1] - range.ln()).abs();
        Ok(self.value(sill, range) + excess)
    }
}

/// Maximizes the replicate Gaussian likelihood over `(sill, range)` in a box,
/// by Nelder-Mead in log parameters started from the best point of a coarse grid.
pub fn fit_exponential_ml(panel: &DataPanel, sigma_eps2: f64) -> Result<ExponentialFit> {
    if sigma_eps2 < 0.0 {
        return Err(Error::InvalidParameter("sigma_eps2 must be nonnegative".into()));
    }
    let coords = panel.locations().coords();
    let rows: Vec<Vec<f64>> = coords.row_iter().map(|r| r.iter().copied().collect()).collect();
    let n = rows.len();
    let dist = DMatrix::from_fn(n, n, |i, j| euclid(&rows[i], &rows[j]));
    let lik = ExpLikelihood {
        dist,
        moment: panel.second_moment(),
        replicates: panel.replicates() as f64,
        sigma_eps2,
    };

    let level = (panel.second_moment().trace() / n as f64 - sigma_eps2).max(1e-3);
    let mut start = (f64::INFINITY, level.ln(), 0.3f64.ln());
    for i in 0..8 {
        for j in 0..8 {
            let ls = (level * 1e-2).ln() + i as f64 * (1e3f64).ln() / 7.0;
            let lr = (0.01f64).ln() + j as f64 * (300.0f64).ln() / 7.0;
            let (s, r) = ExpLikelihood::clamp(&[ls, lr]);
            let v = lik.value(s, r);
            if v < start.0 {
                start = (v, s.ln(), r.ln());
            }
        }
    }
    let (x0, y0) = (start.1, start.2);
    let simplex = vec![vec![x0, y0], vec![x0 + 0.5, y0], vec![x0, y0 + 0.5]];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-10)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let res = Executor::new(lik, solver)
        .configure(|s| s.max_iters(2000))
        .run()
        .map_err(|e| Error::InvalidParameter(format!("optimizer failed: {e}")))?;
    let converged = matches!(
        res.state.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
    );
    let best = res.state.get_best_param().cloned().unwrap_or(vec![x0, y0]);
    let (sill, range) = ExpLikelihood::clamp(&best);
    let lik = res.problem.problem.expect("problem is returned");
    // the objective is flat near a bound, so the simplex stops close to it rather than on it
    let near = |v: f64, b: f64| (v / b).ln().abs() < 1e-3;
    let at_bound =
        near(sill, SILL_BOUNDS.0) || near(sill, SILL_BOUNDS.1) || near(range, RANGE_BOUNDS.0) || near(range, RANGE_BOUNDS.1);
    Ok(ExponentialFit { sill, range, sigma_eps2, negloglik: lik.value(sill, range), converged, at_bound })
}

impl ExponentialFit {
    /// Likelihood objective `T log|Sigma| + T tr(S Sigma^{-1})` at arbitrary parameters.
    pub fn objective(panel: &DataPanel, sigma_eps2: f64, sill: f64, range: f64) -> f64 {
        let coords = panel.locations().coords();
        let rows: Vec<Vec<f64>> = coords.row_iter().map(|r| r.iter().copied().collect()).collect();
        let n = rows.len();
        let lik = ExpLikelihood {
            dist: DMatrix::from_fn(n, n, |i, j| euclid(&rows[i], &rows[j])),
            moment: panel.second_moment(),
            replicates: panel.replicates() as f64,
            sigma_eps2,
        };
        lik.value(sill, range)
    }

    /// Simple kriging of the smooth field at `sites` for every column of `z`.
    pub fn krige(&self, locs: &LocationSet, z: &DMatrix<f64>, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cov = ReferenceCovariance::Exponential { sill: self.sill, range: self.range };
        let mut sigma = cov.matrix(locs.coords(), locs.coords())?;
        for i in 0..locs.n() {
            sigma[(i, i)] += self.sigma_eps2;
        }
        let chol = Cholesky::new(sigma).ok_or_else(|| Error::NotPositiveDefinite("exponential covariance".into()))?;
        let weights = chol.solve(z);
        Ok(cov.matrix(sites, locs.coords())? * weights)
    }
}

/// Average over `t` of the quadrature-weighted squared error, `m x T` inputs.
pub fn mspe(predictions: &DMatrix<f64>, truth: &DMatrix<f64>, weights: &DVector<f64>) -> Result<f64> {
    if predictions.shape() != truth.shape() || weights.len() != truth.nrows() {
        return Err(Error::Shape(format!(
            "predictions {:?}, truth {:?}, {} weights",
            predictions.shape(),
            truth.shape(),
            weights.len()
        )));
    }
    if truth.ncols() == 0 {
        return Err(Error::EmptyPanel);
    }
    let mut total = 0.0;
    for t in 0..truth.ncols() {
        for i in 0..truth.nrows() {
            let e = predictions[(i, t)] - truth[(i, t)];
            total += weights[i] * e * e;
        }
    }
    Ok(total / truth.ncols() as f64)
}

/// `|Sigma_hat - S|_F`
pub fn frobenius_loss(sigma_hat: &DMatrix<f64>, s_test: &DMatrix<f64>) -> Result<f64> {
    if sigma_hat.shape() != s_test.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", sigma_hat.shape(), s_test.shape())));
    }
    Ok(frobenius(&(sigma_hat - s_test)))
}

/// `(tr(Sigma_hat^{-1} S) + log|Sigma_hat| - log|S| - n) / 2` for positive definite inputs.
pub fn kl_loss(sigma_hat: &DMatrix<f64>, s_test: &DMatrix<f64>) -> Result<f64> {
    if sigma_hat.shape() != s_test.shape() || sigma_hat.nrows() != sigma_hat.ncols() {
        return Err(Error::Shape(format!("{:?} vs {:?}", sigma_hat.shape(), s_test.shape())));
    }
    let ch = Cholesky::new(sigma_hat.clone()).ok_or_else(|| Error::NotPositiveDefinite("estimated covariance".into()))?;
    let cs = Cholesky::new(s_test.clone()).ok_or_else(|| Error::NotPositiveDefinite("test covariance".into()))?;
    let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let n = sigma_hat.nrows() as f64;
    Ok(0.5 * (ch.solve(s_test).trace() + logdet(&ch) - logdet(&cs) - n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig2a,
    Fig2b,
    Table1,
    Table3,
    MultiresDemo,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::Fig2a, Experiment::Fig2b, Experiment::Table1, Experiment::Table3, Experiment::MultiresDemo];

    pub fn by_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::Unknown { kind: "experiment", name: name.into() })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Fig2a => "fig2a",
            Experiment::Fig2b => "fig2b",
            Experiment::Table1 => "table1",
            Experiment::Table3 => "table3",
            Experiment::MultiresDemo => "multires_demo",
        }
    }
}

/// Declarative run configuration; unset fields take per-experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproConfig {
    pub name: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Monte Carlo replicates (table3 only).
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Quadrature points per axis.
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub grid_rule: Option<String>,
    /// Number of sweep values (fig2a, fig2b).
    #[serde(default)]
    pub sweep_points: Option<usize>,
    /// Basis counts (multires_demo).
    #[serde(default)]
    pub k_values: Option<Vec<usize>>,
}

fn default_seed() -> u64 {
    20_180_417
}

impl ReproConfig {
    pub fn new(name: Experiment) -> Self {
        ReproConfig {
            name,
            seed: default_seed(),
            replicates: None,
            grid_points: None,
            grid_rule: None,
            sweep_points: None,
            k_values: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read_toml(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn grid(&self, d: usize, points: usize, rule: QuadratureRule) -> Result<QuadratureGrid> {
        let rule = match &self.grid_rule {
            Some(r) => QuadratureRule::by_name(r)?,
            None => rule,
        };
        QuadratureGrid::tensor(d, self.grid_points.unwrap_or(points), rule)
    }
}

/// Numeric result rows with named columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultTable {
    fn new(columns: &[&str]) -> Self {
        ResultTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.columns)?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(|&v| if v.fract() == 0.0 && v.abs() < 1e15 { format!("{v}") } else { fmt_f64(v) }))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Mean and standard error (or a single value) of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub label: String,
    pub mean: f64,
    pub std_error: Option<f64>,
    pub count: usize,
}

impl Summary {
    fn value(label: &str, v: f64) -> Self {
        Summary { label: label.into(), mean: v, std_error: None, count: 1 }
    }

    fn of(label: &str, xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Some((var / n).sqrt())
        } else {
            None
        };
        Summary { label: label.into(), mean, std_error: se, count: xs.len() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Reproduction {
    pub config: ReproConfig,
    pub table: ResultTable,
    pub summary: Vec<Summary>,
}

impl Reproduction {
    pub fn summary_value(&self, label: &str) -> Option<&Summary> {
        self.summary.iter().find(|s| s.label == label)
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["label", "mean", "std_error", "count"])?;
        for s in &self.summary {
            wtr.write_record([
                s.label.clone(),
                fmt_f64(s.mean),
                s.std_error.map(fmt_f64).unwrap_or_default(),
                s.count.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Runs a named experiment.
pub fn run_reproduction(config: &ReproConfig) -> Result<Reproduction> {
    let (table, summary) = match config.name {
        Experiment::Fig2a => sweep_1d(config, 0.25, 0.9, 66, "r", BisquareBasis::radius_family)?,
        Experiment::Fig2b => sweep_1d(config, -0.2, 0.0, 21, "delta", BisquareBasis::shift_family)?,
        Experiment::Table1 => table1(config)?,
        Experiment::Table3 => table3(config)?,
        Experiment::MultiresDemo => multires_demo(config)?,
    };
    Ok(Reproduction { config: config.clone(), table, summary })
}

/// `n` points from `lo` to `hi` inclusive, each computed as a weighted mean of the ends.
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let m = (n - 1) as f64;
    (0..n).map(|i| (lo * (m - i as f64) + hi * i as f64) / m).collect()
}

fn sweep_1d(
    config: &ReproConfig,
    lo: f64,
    hi: f64,
    default_points: usize,
    label: &str,
    family: fn(f64) -> BisquareBasis,
) -> Result<(ResultTable, Vec<Summary>)> {
    let grid = config.grid(1, 201, QuadratureRule::Trapezoid)?;
    let problem = IseProblem::new(&ReferenceCovariance::Example1, grid)?;
    let values = linspace(lo, hi, config.sweep_points.unwrap_or(default_points));
    let ises: Vec<f64> = values
        .par_iter()
        .map(|&v| {
            let f = problem.tabulate(&family(v))?;
            Ok(problem.best(&f)?.1)
        })
        .collect::<Result<_>>()?;
    let mut table = ResultTable::new(&[label, "ise"]);
    for (v, e) in values.iter().zip(&ises) {
        table.rows.push(vec![*v, *e]);
    }
    let best = (0..ises.len()).min_by(|&a, &b| ises[a].total_cmp(&ises[b])).expect("nonempty sweep");
    let summary = vec![
        Summary::value(&format!("argmin_{label}"), values[best]),
        Summary::value("min_ise", ises[best]),
        Summary::value("ise_first", ises[0]),
        Summary::value("ise_last", ises[ises.len() - 1]),
    ];
    Ok((table, summary))
}

/// Control points `((2j1 - 1)/36, (2j2 - 1)/36)`, `1 <= j1, j2 <= 18`.
pub fn table1_controls() -> Result<LocationSet> {
    let m = 18;
    LocationSet::new(DMatrix::from_fn(m * m, 2, |i, j| {
        let idx = if j == 0 { i % m } else { i / m };
        (2 * idx + 1) as f64 / 36.0
    }))
}

fn table1(config: &ReproConfig) -> Result<(ResultTable, Vec<Summary>)> {
    let grid = config.grid(2, 30, QuadratureRule::Uniform)?;
    let problem = IseProblem::new(&ReferenceCovariance::Exponential2d, grid)?;
    let lattice = [3usize, 5, 7, 9, 11, 13];
    let k_max = lattice.iter().map(|l| l * l + 3).max().expect("nonempty");
    let system = TpsSystem::build(table1_controls()?)?;
    let full = MrtsBasis::compute(&system, k_max)?;
    let rows: Vec<Vec<f64>> = lattice
        .par_iter()
        .map(|&l| {
            let conventional = ConventionalTpsBasis::new(l)?;
            let k = conventional.nominal_count();
            let tps = problem.best(&problem.tabulate(&conventional)?)?.1;
            let proposed = problem.best(&problem.tabulate(&full.truncated(k)?)?)?.1;
            Ok(vec![k as f64, tps, proposed])
        })
        .collect::<Result<_>>()?;
    let mut table = ResultTable::new(&["k", "tps", "proposed"]);
    table.rows = rows;
    let summary = table
        .rows
        .iter()
        .flat_map(|r| {
            let k = r[0] as usize;
            [Summary::value(&format!("tps_k{k}"), r[1]), Summary::value(&format!("proposed_k{k}"), r[2])]
        })
        .collect();
    Ok((table, summary))
}

fn multires_demo(config: &ReproConfig) -> Result<(ResultTable, Vec<Summary>)> {
    let grid = config.grid(1, 201, QuadratureRule::Trapezoid)?;
    let problem = IseProblem::new(&ReferenceCovariance::DeformedExponential, grid)?;
    let ks = config.k_values.clone().unwrap_or_else(|| vec![8, 15, 30]);
    let k_max = ks.iter().copied().max().ok_or_else(|| Error::InvalidParameter("no K values".into()))?;
    let system = TpsSystem::build(LocationSet::line(50, 0.0, 1.0 / 50.0)?)?;
    let full = MrtsBasis::compute(&system, k_max)?;
    let mut table = ResultTable::new(&["k", "ise"]);
    let mut summary = Vec::new();
    for &k in &ks {
        let e = problem.best(&problem.tabulate(&full.truncated(k)?)?)?.1;
        table.rows.push(vec![k as f64, e]);
        summary.push(Summary::value(&format!("ise_k{k}"), e));
    }
    Ok((table, summary))
}

/// Methods scored in the prediction comparison, in column order.
pub const TABLE3_METHODS: [&str; 9] =
    ["truth", "exponential", "proposed", "layout1", "layout2", "layout3", "layout4", "layout5", "layout6"];

/// One replicate of the prediction comparison: MSPE per method and the selected `K`.
pub fn table3_replicate(seed: u64, replicate: u64) -> Result<(Vec<f64>, usize)> {
    let spec = SimulationSpec::two_cosine(seed, replicate);
    let sim = simulate_panel(&spec)?;
    let panel = &sim.panel;
    let z = panel.values();
    let grid_pts = sim.grid.points();
    let weights = sim.grid.weights();
    let score = |pred: DMatrix<f64>| mspe(&pred, &sim.truth_on_grid, weights);
    let mut out = Vec::with_capacity(TABLE3_METHODS.len());

    let m_true = DMatrix::from_diagonal(&DVector::from_column_slice(&TWO_COSINE_VARIANCES));
    let truth = SreFit::with_parameters(panel, TwoCosineBasis, &m_true, 0.0, spec.sigma_eps2, &FitOptions::default())?;
    out.push(score(KrigingOperator::new(&truth).krige(z, grid_pts)?)?);

    let expo = fit_exponential_ml(panel, spec.sigma_eps2)?;
    out.push(score(expo.krige(panel.locations(), z, grid_pts)?)?);

    let system = TpsSystem::build(panel.locations().clone())?;
    let basis = MrtsBasis::compute(&system, 20)?;
    let sel = select_k_with_basis(panel, &basis, 3, 20, spec.sigma_eps2)?;
    out.push(score(KrigingOperator::new(&sel.best).krige(z, grid_pts)?)?);

    let opts = FitOptions { rank_policy: RankPolicy::Truncate, ..Default::default() };
    for l in 1..=6 {
        let fit = fit_ml_with(panel, BisquareBasis::layout(l)?, spec.sigma_eps2, &opts)?;
        out.push(score(KrigingOperator::new(&fit).krige(z, grid_pts)?)?);
    }
    Ok((out, sel.best.k()))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between order statistics
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn table3(config: &ReproConfig) -> Result<(ResultTable, Vec<Summary>)> {
    let reps = config.replicates.unwrap_or(50);
    if reps == 0 {
        return Err(Error::InvalidParameter("at least one replicate is required".into()));
    }
    let results: Vec<(Vec<f64>, usize)> =
        (0..reps as u64).into_par_iter().map(|r| table3_replicate(config.seed, r)).collect::<Result<_>>()?;
    let mut columns = vec!["replicate"];
    columns.extend(TABLE3_METHODS);
    columns.push("k_hat");
    let mut table = ResultTable::new(&columns);
    for (r, (scores, k)) in results.iter().enumerate() {
        let mut row = vec![r as f64];
        row.extend(scores);
        row.push(*k as f64);
        table.rows.push(row);
    }
    let mut summary: Vec<Summary> = TABLE3_METHODS
        .iter()
        .enumerate()
        .map(|(j, m)| Summary::of(m, &results.iter().map(|r| r.0[j]).collect::<Vec<_>>()))
        .collect();
    let mut ks: Vec<f64> = results.iter().map(|r| r.1 as f64).collect();
    ks.sort_by(f64::total_cmp);
    summary.push(Summary::value("k_hat_q1", quantile(&ks, 0.25)));
    summary.push(Summary::value("k_hat_median", quantile(&ks, 0.5)));
    summary.push(Summary::value("k_hat_q3", quantile(&ks, 0.75)));
    Ok((table, summary))
}
