//! Elastic net penalised least squares by cyclic coordinate descent.
//!
//! The solver minimises the naive objective
//! `||y - X b||^2 + lambda2 ||b||^2 + lambda1 ||b||_1`
//! on a standardised design (columns mean 0 variance 1, response
//! centred). L1 strength is requested as a fraction of the L1 norm of the
//! `lambda1 = 0` solution; the matching `lambda1` is located by bisection.
//! Reported fits carry both the naive coefficients and the
//! `(1 + lambda2)`-rescaled ones that undo the double shrinkage, mapped
//! back to original covariate units.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop when the largest coefficient change in a sweep falls below this.
    pub tolerance: f64,
    /// Hard cap on coordinate-descent sweeps.
    pub max_sweeps: usize,
    /// Acceptable subgradient violation, relative to the gradient scale.
    pub kkt_tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-8,
            max_sweeps: 100_000,
            kkt_tolerance: 1e-6,
        }
    }
}

/// Column-contiguous design storage for fast coordinate updates.
#[derive(Debug, Clone)]
pub(crate) struct Columns {
    cols: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
}

impl Columns {
    pub(crate) fn from_array(x: &Array2<f64>) -> Self {
        let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|j| x.column(j).to_vec()).collect();
        let sq_norms = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        Columns { cols, sq_norms }
    }

    fn k(&self) -> usize {
        self.cols.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn l1_norm(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Raw coordinate-descent output.
#[derive(Debug, Clone)]
pub struct CdSolution {
    pub beta: Vec<f64>,
    pub sweeps: usize,
    pub kkt_violation: f64,
}

/// Largest violation of the stationarity conditions at `beta`:
/// active coordinates must zero the subgradient, inactive ones must keep
/// `|2 x_j' (y - X b)|` within `l1`.
pub fn kkt_violation(x: &Array2<f64>, y: &[f64], beta: &[f64], l1: f64, l2: f64) -> f64 {
    let cols = Columns::from_array(x);
    let residual = residual_of(&cols, y, beta);
    kkt_of(&cols, &residual, beta, l1, l2)
}

fn residual_of(cols: &Columns, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut r = y.to_vec();
    for (j, col) in cols.cols.iter().enumerate() {
        let b = beta[j];
        if b != 0.0 {
            for (ri, xi) in r.iter_mut().zip(col) {
                *ri -= b * xi;
            }
        }
    }
    r
}

fn kkt_of(cols: &Columns, residual: &[f64], beta: &[f64], l1: f64, l2: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, col) in cols.cols.iter().enumerate() {
        let grad = -2.0 * dot(col, residual) + 2.0 * l2 * beta[j];
        let violation = if beta[j] != 0.0 {
            (grad + l1 * beta[j].signum()).abs()
        } else {
            (grad.abs() - l1).max(0.0)
        };
        worst = worst.max(violation);
    }
    worst
}

fn objective_of(residual: &[f64], beta: &[f64], l1: f64, l2: f64) -> f64 {
    let rss: f64 = residual.iter().map(|r| r * r).sum();
    let l2_term: f64 = beta.iter().map(|b| b * b).sum::<f64>() * l2;
    rss + l2_term + l1 * l1_norm(beta)
}

fn cd_on(
    cols: &Columns,
    y: &[f64],
    l1: f64,
    l2: f64,
    warm: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<CdSolution> {
    let k = cols.k();
    let mut beta = match warm {
        Some(w) => {
            debug_assert_eq!(w.len(), k);
            w.to_vec()
        }
        None => vec![0.0; k],
    };
    let mut residual = residual_of(cols, y, &beta);
    let gradient_scale = cols
        .cols
        .iter()
        .map(|c| 2.0 * dot(c, y).abs())
        .fold(1.0_f64, f64::max);
    let kkt_threshold = opts.kkt_tolerance * gradient_scale;

    #[cfg(debug_assertions)]
    let mut prev_objective = objective_of(&residual, &beta, l1, l2);

    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..k {
            let denom = cols.sq_norms[j] + l2;
            let old = beta[j];
            let new = if denom <= 0.0 {
                0.0
            } else {
                let z = dot(&cols.cols[j], &residual) + cols.sq_norms[j] * old;
                soft_threshold(z, l1 / 2.0) / denom
            };
            let delta = new - old;
            if delta != 0.0 {
                for (ri, xi) in residual.iter_mut().zip(&cols.cols[j]) {
                    *ri -= delta * xi;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }

        #[cfg(debug_assertions)]
        {
            let objective = objective_of(&residual, &beta, l1, l2);
            debug_assert!(
                objective <= prev_objective + 1e-9 * prev_objective.abs().max(1.0),
                "coordinate sweep increased the objective: {prev_objective} -> {objective}"
            );
            prev_objective = objective;
        }

        // The contract is the subgradient condition; the coefficient-change
        // criterion is only a cheap proxy. Near-duplicate columns at
        // lambda2 = 0 can cycle with small but never-vanishing updates, so
        // also check stationarity periodically.
        if max_delta < opts.tolerance || sweeps.is_multiple_of(100) {
            residual = residual_of(cols, y, &beta);
            let kkt = kkt_of(cols, &residual, &beta, l1, l2);
            if kkt <= kkt_threshold {
                return Ok(CdSolution {
                    beta,
                    sweeps,
                    kkt_violation: kkt,
                });
            }
        }
    }
    let kkt = kkt_of(cols, &residual_of(cols, y, &beta), &beta, l1, l2);
    Err(Error::Convergence {
        violation: kkt,
        sweeps,
    })
}

/// Cyclic coordinate descent on the naive objective, without any
/// standardisation. Exposed for direct use on already-prepared designs.
pub fn coordinate_descent(
    x: &Array2<f64>,
    y: &[f64],
    l1: f64,
    l2: f64,
    warm: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<CdSolution> {
    if x.nrows() != y.len() {
        return Err(Error::arg("row count of X must match length of y"));
    }
    if l1 < 0.0 || l2 < 0.0 {
        return Err(Error::arg("penalties must be non-negative"));
    }
    cd_on(&Columns::from_array(x), y, l1, l2, warm, opts)
}

/// Solves `(X'X + l2 I) b = X'y` by Cholesky. A singular Gram matrix
/// (possible when `l2 = 0` and columns outnumber rows) is retried with a
/// vanishing diagonal damping, which selects the minimum-norm limit; the
/// caller verifies the result against the undamped optimality conditions.
fn ridge_direct(cols: &Columns, y: &[f64], l2: f64) -> Option<Vec<f64>> {
    let k = cols.k();
    if k == 0 {
        return Some(Vec::new());
    }
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for j in 0..k {
        b[j] = dot(&cols.cols[j], y);
        for i in j..k {
            let v = dot(&cols.cols[i], &cols.cols[j]);
            a[i * k + j] = v;
            a[j * k + i] = v;
        }
        a[j * k + j] += l2;
    }
    let max_diag = (0..k).map(|j| a[j * k + j]).fold(0.0_f64, f64::max);
    if let Some(z) = cholesky_solve(a.clone(), &b, k, max_diag) {
        return Some(z);
    }
    let jitter = 1e-10 * max_diag.max(1.0);
    for j in 0..k {
        a[j * k + j] += jitter;
    }
    cholesky_solve(a, &b, k, max_diag)
}

fn cholesky_solve(mut a: Vec<f64>, b: &[f64], k: usize, max_diag: f64) -> Option<Vec<f64>> {
    // In-place Cholesky, lower triangle.
    for j in 0..k {
        let mut d = a[j * k + j];
        for t in 0..j {
            d -= a[j * k + t] * a[j * k + t];
        }
        if d <= 1e-12 * max_diag.max(1.0) {
            return None;
        }
        let l_jj = d.sqrt();
        a[j * k + j] = l_jj;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for t in 0..j {
                v -= a[i * k + t] * a[j * k + t];
            }
            a[i * k + j] = v / l_jj;
        }
    }
    // Forward then backward substitution.
    let mut z = b.to_vec();
    for i in 0..k {
        for t in 0..i {
            let l_it = a[i * k + t];
            z[i] -= l_it * z[t];
        }
        z[i] /= a[i * k + i];
    }
    for i in (0..k).rev() {
        for t in i + 1..k {
            let l_ti = a[t * k + i];
            z[i] -= l_ti * z[t];
        }
        z[i] /= a[i * k + i];
    }
    Some(z)
}

/// Design standardised column-wise to mean 0 variance 1, response centred.
/// Effectively constant columns are dropped and remembered so their
/// coefficients report as exactly zero.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    pub(crate) cols: Columns,
    pub(crate) y: Vec<f64>,
    pub y_mean: f64,
    pub col_means: Vec<f64>,
    /// Per original column; 0.0 marks a dropped column.
    pub col_stds: Vec<f64>,
    pub kept: Vec<usize>,
    pub p: usize,
    pub n: usize,
}

pub fn standardize(x: &Array2<f64>, y: &[f64]) -> Result<StandardizedDesign> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 || p == 0 {
        return Err(Error::arg("design must have at least one row and column"));
    }
    if y.len() != n {
        return Err(Error::arg("row count of X must match length of y"));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_centered: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut col_means = vec![0.0; p];
    let mut col_stds = vec![0.0; p];
    let mut kept = Vec::new();
    let mut cols = Vec::new();
    for j in 0..p {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        col_means[j] = mean;
        if std <= 1e-9 * (1.0 + mean.abs()) {
            continue; // constant column, carries no information
        }
        col_stds[j] = std;
        kept.push(j);
        cols.push(col.iter().map(|v| (v - mean) / std).collect::<Vec<f64>>());
    }
    let sq_norms = cols.iter().map(|c: &Vec<f64>| c.iter().map(|v| v * v).sum()).collect();
    Ok(StandardizedDesign {
        cols: Columns { cols, sq_norms },
        y: y_centered,
        y_mean,
        col_means,
        col_stds,
        kept,
        p,
        n,
    })
}

/// Fraction-parameterised solve on the standardised (kept) columns.
struct FractionSolve {
    beta: Vec<f64>,
    lambda1: f64,
    achieved_fraction: f64,
    sweeps: usize,
    kkt_violation: f64,
}

/// Shares the `lambda1 = 0` endpoint (the fraction base) across a grid of
/// fraction solves at one `lambda2`.
pub(crate) struct FractionSolver<'a> {
    design: &'a StandardizedDesign,
    lambda2: f64,
    ridge_beta: Vec<f64>,
    ridge_sweeps: usize,
    ridge_kkt: f64,
    norm0: f64,
    lambda_max: f64,
}

impl<'a> FractionSolver<'a> {
    pub(crate) fn new(
        design: &'a StandardizedDesign,
        lambda2: f64,
        opts: &SolveOptions,
    ) -> Result<Self> {
        let cols = &design.cols;
        let y = &design.y;
        let ridge = if cols.k() == 0 {
            CdSolution {
                beta: Vec::new(),
                sweeps: 0,
                kkt_violation: 0.0,
            }
        } else {
            match ridge_direct(cols, y, lambda2) {
                Some(direct) => {
                    let r = residual_of(cols, y, &direct);
                    let kkt = kkt_of(cols, &r, &direct, 0.0, lambda2);
                    let gradient_scale = cols
                        .cols
                        .iter()
                        .map(|c| 2.0 * dot(c, y).abs())
                        .fold(1.0_f64, f64::max);
                    if kkt <= opts.kkt_tolerance * gradient_scale {
                        CdSolution {
                            beta: direct,
                            sweeps: 0,
                            kkt_violation: kkt,
                        }
                    } else {
                        cd_on(cols, y, 0.0, lambda2, Some(&direct), opts)?
                    }
                }
                None => cd_on(cols, y, 0.0, lambda2, None, opts)?,
            }
        };
        let lambda_max = cols
            .cols
            .iter()
            .map(|c| 2.0 * dot(c, y).abs())
            .fold(0.0_f64, f64::max);
        Ok(FractionSolver {
            design,
            lambda2,
            norm0: l1_norm(&ridge.beta),
            ridge_sweeps: ridge.sweeps,
            ridge_kkt: ridge.kkt_violation,
            ridge_beta: ridge.beta,
            lambda_max,
        })
    }

    fn solve(&self, fraction: f64, warm: Option<&[f64]>, opts: &SolveOptions) -> Result<FractionSolve> {
        let cols = &self.design.cols;
        let y = &self.design.y;
        let k = cols.k();
        if k == 0 || fraction >= 1.0 {
            return Ok(FractionSolve {
                beta: self.ridge_beta.clone(),
                lambda1: 0.0,
                achieved_fraction: 1.0,
                sweeps: self.ridge_sweeps,
                kkt_violation: self.ridge_kkt,
            });
        }
        if fraction <= 0.0 || self.norm0 <= 1e-12 || self.lambda_max == 0.0 {
            return Ok(FractionSolve {
                beta: vec![0.0; k],
                lambda1: self.lambda_max,
                achieved_fraction: 0.0,
                sweeps: 0,
                kkt_violation: 0.0,
            });
        }

        let target = fraction * self.norm0;
        let mut lo = 0.0;
        let mut hi = self.lambda_max;
        let mut beta = match warm {
            Some(w) => w.to_vec(),
            None => self.ridge_beta.clone(),
        };
        let mut lambda1 = hi;
        let mut kkt = 0.0;
        let mut sweeps_total = 0;
        for _ in 0..200 {
            lambda1 = 0.5 * (lo + hi);
            let solution = cd_on(cols, y, lambda1, self.lambda2, Some(&beta), opts)?;
            sweeps_total += solution.sweeps;
            kkt = solution.kkt_violation;
            beta = solution.beta;
            let norm = l1_norm(&beta);
            if (norm - target).abs() <= 1e-10 * self.norm0 {
                break;
            }
            if norm > target {
                lo = lambda1;
            } else {
                hi = lambda1;
            }
            if hi - lo <= 1e-14 * self.lambda_max {
                break;
            }
        }

        Ok(FractionSolve {
            achieved_fraction: l1_norm(&beta) / self.norm0,
            beta,
            lambda1,
            sweeps: sweeps_total,
            kkt_violation: kkt,
        })
    }
}

/// Convergence and bookkeeping carried by a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub sweeps: usize,
    pub kkt_violation: f64,
    /// Original indices of constant columns dropped before solving.
    pub dropped_columns: Vec<usize>,
}

/// A solved elastic net problem mapped back to original covariate units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetFit {
    /// Minimiser of the naive objective, original units.
    pub naive: Vec<f64>,
    /// `(1 + lambda2) * naive`, undoing the double shrinkage.
    pub rescaled: Vec<f64>,
    pub intercept_naive: f64,
    pub intercept_rescaled: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Requested fraction of the lambda1 = 0 solution's L1 norm.
    pub l1_fraction: f64,
    pub achieved_fraction: f64,
    /// Indices of covariates with non-zero coefficients.
    pub active: Vec<usize>,
    /// Naive coefficients on the standardised scale (zeros for dropped
    /// columns); the scale on which the L1 fraction is measured.
    pub naive_standardized: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl ElasticNetFit {
    /// Predicted response (log scale in the study pipeline) using the
    /// rescaled coefficients.
    pub fn predict(&self, covariates: &[f64]) -> f64 {
        debug_assert_eq!(covariates.len(), self.rescaled.len());
        self.intercept_rescaled + dot(&self.rescaled, covariates)
    }

    /// Same prediction with the naive coefficients.
    pub fn predict_naive(&self, covariates: &[f64]) -> f64 {
        self.intercept_naive + dot(&self.naive, covariates)
    }
}

pub(crate) fn fit_with_solver(
    solver: &FractionSolver<'_>,
    l1_fraction: f64,
    opts: &SolveOptions,
    warm_kept: Option<&[f64]>,
) -> Result<(ElasticNetFit, Vec<f64>)> {
    if !(0.0..=1.0).contains(&l1_fraction) {
        return Err(Error::arg(format!("l1 fraction {l1_fraction} outside [0, 1]")));
    }
    let design = solver.design;
    let lambda2 = solver.lambda2;
    let solved = solver.solve(l1_fraction, warm_kept, opts)?;

    let mut naive_standardized = vec![0.0; design.p];
    let mut naive = vec![0.0; design.p];
    let mut rescaled = vec![0.0; design.p];
    for (slot, &j) in design.kept.iter().enumerate() {
        let b = solved.beta[slot];
        naive_standardized[j] = b;
        naive[j] = b / design.col_stds[j];
        rescaled[j] = (1.0 + lambda2) * naive[j];
    }
    let intercept = |coefs: &[f64]| {
        design.y_mean
            - coefs
                .iter()
                .zip(&design.col_means)
                .map(|(c, m)| c * m)
                .sum::<f64>()
    };
    let fit = ElasticNetFit {
        intercept_naive: intercept(&naive),
        intercept_rescaled: intercept(&rescaled),
        active: (0..design.p).filter(|&j| naive[j] != 0.0).collect(),
        naive,
        rescaled,
        lambda1: solved.lambda1,
        lambda2,
        l1_fraction,
        achieved_fraction: solved.achieved_fraction,
        naive_standardized,
        diagnostics: SolveDiagnostics {
            sweeps: solved.sweeps,
            kkt_violation: solved.kkt_violation,
            dropped_columns: (0..design.p).filter(|j| !design.kept.contains(j)).collect(),
        },
    };
    Ok((fit, solved.beta))
}

pub(crate) fn fit_standardized_warm(
    design: &StandardizedDesign,
    lambda2: f64,
    l1_fraction: f64,
    opts: &SolveOptions,
    warm_kept: Option<&[f64]>,
) -> Result<(ElasticNetFit, Vec<f64>)> {
    if lambda2 < 0.0 || !lambda2.is_finite() {
        return Err(Error::arg(format!("lambda2 {lambda2} must be non-negative")));
    }
    let solver = FractionSolver::new(design, lambda2, opts)?;
    fit_with_solver(&solver, l1_fraction, opts, warm_kept)
}

pub(crate) fn fit_standardized(
    design: &StandardizedDesign,
    lambda2: f64,
    l1_fraction: f64,
    opts: &SolveOptions,
) -> Result<ElasticNetFit> {
    fit_standardized_warm(design, lambda2, l1_fraction, opts, None).map(|(fit, _)| fit)
}

/// An elastic net instance: standardised design plus penalties.
#[derive(Debug, Clone)]
pub struct ElasticNetProblem {
    design: StandardizedDesign,
    pub lambda2: f64,
    pub l1_fraction: f64,
}

impl ElasticNetProblem {
    pub fn new(x: &Array2<f64>, y: &[f64], lambda2: f64, l1_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&l1_fraction) {
            return Err(Error::arg(format!("l1 fraction {l1_fraction} outside [0, 1]")));
        }
        if lambda2 < 0.0 || !lambda2.is_finite() {
            return Err(Error::arg(format!("lambda2 {lambda2} must be non-negative")));
        }
        Ok(ElasticNetProblem {
            design: standardize(x, y)?,
            lambda2,
            l1_fraction,
        })
    }

    pub fn design(&self) -> &StandardizedDesign {
        &self.design
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<ElasticNetFit> {
        fit_standardized(&self.design, self.lambda2, self.l1_fraction, opts)
    }
}

/// Fits along a grid of L1 fractions with warm starts.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionPath {
    pub fractions: Vec<f64>,
    pub fits: Vec<ElasticNetFit>,
}

pub fn solution_path(
    x: &Array2<f64>,
    y: &[f64],
    lambda2: f64,
    fractions: &[f64],
    opts: &SolveOptions,
) -> Result<SolutionPath> {
    if fractions.is_empty() {
        return Err(Error::arg("fraction grid is empty"));
    }
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::arg("fractions must be sorted ascending"));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::arg("fractions must lie in [0, 1]"));
    }
    let design = standardize(x, y)?;
    let mut fits = Vec::with_capacity(fractions.len());
    let mut warm: Option<Vec<f64>> = None;
    for &fraction in fractions {
        let (fit, kept_beta) =
            fit_standardized_warm(&design, lambda2, fraction, opts, warm.as_deref())?;
        warm = Some(kept_beta);
        fits.push(fit);
    }
    Ok(SolutionPath {
        fractions: fractions.to_vec(),
        fits,
    })
}

/// CSV export of a path: `fraction,coefficient_name,value` (rescaled).
pub fn write_solution_path_csv<W: std::io::Write>(
    writer: W,
    path: &SolutionPath,
    names: &[String],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["fraction", "coefficient_name", "value"])?;
    for (fraction, fit) in path.fractions.iter().zip(&path.fits) {
        if names.len() != fit.rescaled.len() {
            return Err(Error::arg("name count does not match coefficient count"));
        }
        for (name, value) in names.iter().zip(&fit.rescaled) {
            out.write_record(&[
                crate::gps::format_f64(*fraction),
                name.clone(),
                crate::gps::format_f64(*value),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
