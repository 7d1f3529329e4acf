//! Multi-resolution elastic net: per-resolution tuning by repeated
//! cross-validation on the estimation set, held-out test error per
//! resolution, selection of the best resolution and export of the fitted
//! model as a closed-form predictive equation.
//!
//! Tuning minimises mean squared prediction error on the log scale (the
//! scale the regression runs on); the resolution choice minimises squared
//! prediction error in seconds, summed over the test rows.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elasticnet::{
    fit_standardized, fit_with_solver, standardize, ElasticNetFit, FractionSolver, SolveOptions,
};
use crate::error::{Error, Result};
use crate::gps::format_f64;
use crate::grid::MAX_SPEED_MS;
use crate::seed::{rng_for, TAG_CV};
use crate::study::{StudyData, StudyTable, SCALAR_COVARIATES};

/// Resolutions whose interval endpoints land exactly on the default
/// 0.025 m/s profile grid (divisors of 500 up to 125).
pub const DEFAULT_RESOLUTIONS: [u32; 7] = [5, 10, 20, 25, 50, 100, 125];

/// Candidate elastic net tuning constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub lambda2: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            lambda2: vec![0.0, 0.01, 0.1, 1.0, 10.0, 100.0],
            fractions: (1..=20).map(|k| k as f64 / 20.0).collect(),
        }
    }
}

impl TuningGrid {
    fn validate(&self) -> Result<()> {
        if self.lambda2.is_empty() || self.fractions.is_empty() {
            return Err(Error::arg("tuning grid must be non-empty"));
        }
        if self.lambda2.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::arg("lambda2 grid values must be non-negative"));
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::arg("fraction grid values must lie in [0, 1]"));
        }
        if self.lambda2.windows(2).any(|w| w[0] >= w[1])
            || self.fractions.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::arg("tuning grid values must be strictly increasing"));
        }
        Ok(())
    }
}

/// Cross-validation shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub folds: usize,
    pub repeats: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            folds: 10,
            repeats: 10,
        }
    }
}

/// One point of the cross-validation error surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda2: f64,
    pub l1_fraction: f64,
    pub mean_mse: f64,
}

/// Chosen tuning constants and the surface they minimise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub resolution: u32,
    pub lambda2: f64,
    pub l1_fraction: f64,
    pub surface: Vec<CvPoint>,
}

fn allocate_folds(
    n: usize,
    folds: usize,
    seed: u64,
    resolution: u32,
    repeat: usize,
) -> Result<Vec<Vec<usize>>> {
    for attempt in 0..100u64 {
        let mut rng = rng_for(
            seed,
            &[TAG_CV, resolution as u64, repeat as u64, attempt],
        );
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut allocation = vec![Vec::new(); folds];
        for (i, row) in perm.into_iter().enumerate() {
            allocation[i % folds].push(row);
        }
        if allocation.iter().all(|fold| !fold.is_empty()) {
            return Ok(allocation);
        }
    }
    Err(Error::arg(format!(
        "cannot allocate {folds} non-empty folds from {n} rows"
    )))
}

/// Mean held-out squared error on the log scale for every grid point,
/// averaged over `repeats` random fold allocations of `folds` folds.
/// Rows, not runners, are allocated to folds. Deterministic under `seed`;
/// repeats run in parallel with per-repeat seed streams.
pub fn cross_validate(
    table: &StudyTable,
    grid: &TuningGrid,
    cv: &CvSettings,
    seed: u64,
    opts: &SolveOptions,
) -> Result<TuningResult> {
    grid.validate()?;
    if cv.folds < 2 {
        return Err(Error::arg("cross-validation needs at least 2 folds"));
    }
    if cv.repeats < 1 {
        return Err(Error::arg("cross-validation needs at least 1 repeat"));
    }
    let n = table.rows.len();
    if n < 2 {
        return Err(Error::arg("cross-validation needs at least 2 rows"));
    }
    let points = grid.lambda2.len() * grid.fractions.len();
    let (x, y) = table.design();

    // One summed surface per repeat, later combined in repeat order so the
    // result is independent of scheduling.
    let per_repeat: Vec<Result<Vec<f64>>> = (0..cv.repeats)
        .into_par_iter()
        .map(|repeat| -> Result<Vec<f64>> {
            let allocation = allocate_folds(n, cv.folds, seed, table.resolution, repeat)?;
            let mut sums = vec![0.0; points];
            for fold in &allocation {
                let in_fold: Vec<bool> = {
                    let mut mask = vec![false; n];
                    for &row in fold {
                        mask[row] = true;
                    }
                    mask
                };
                let train_rows: Vec<usize> = (0..n).filter(|i| !in_fold[*i]).collect();
                let mut x_train = ndarray::Array2::zeros((train_rows.len(), x.ncols()));
                let mut y_train = Vec::with_capacity(train_rows.len());
                for (r, &i) in train_rows.iter().enumerate() {
                    x_train.row_mut(r).assign(&x.row(i));
                    y_train.push(y[i]);
                }
                let design = standardize(&x_train, &y_train)?;
                for (il, &lambda2) in grid.lambda2.iter().enumerate() {
                    let solver = FractionSolver::new(&design, lambda2, opts)?;
                    let mut warm: Option<Vec<f64>> = None;
                    for (is, &fraction) in grid.fractions.iter().enumerate() {
                        let (fit, kept) =
                            fit_with_solver(&solver, fraction, opts, warm.as_deref())?;
                        warm = Some(kept);
                        let mse = fold
                            .iter()
                            .map(|&i| {
                                let err = fit.predict(&table.rows[i].covariates)
                                    - table.rows[i].response();
                                err * err
                            })
                            .sum::<f64>()
                            / fold.len() as f64;
                        sums[il * grid.fractions.len() + is] += mse;
                    }
                }
            }
            Ok(sums)
        })
        .collect();

    let mut totals = vec![0.0; points];
    for repeat_sums in per_repeat {
        for (slot, v) in totals.iter_mut().zip(repeat_sums?) {
            *slot += v;
        }
    }
    let denominator = (cv.folds * cv.repeats) as f64;

    let mut surface = Vec::with_capacity(points);
    for (il, &lambda2) in grid.lambda2.iter().enumerate() {
        for (is, &fraction) in grid.fractions.iter().enumerate() {
            surface.push(CvPoint {
                lambda2,
                l1_fraction: fraction,
                mean_mse: totals[il * grid.fractions.len() + is] / denominator,
            });
        }
    }

    // Minimiser; ties prefer the more regularised constants: larger
    // lambda2, then smaller fraction.
    let mut best = &surface[0];
    for point in &surface[1..] {
        let better = point.mean_mse < best.mean_mse
            || (point.mean_mse == best.mean_mse
                && (point.lambda2 > best.lambda2
                    || (point.lambda2 == best.lambda2 && point.l1_fraction < best.l1_fraction)));
        if better {
            best = point;
        }
    }

    Ok(TuningResult {
        resolution: table.resolution,
        lambda2: best.lambda2,
        l1_fraction: best.l1_fraction,
        surface,
    })
}

/// An elastic net fit tagged with the resolution and column names it was
/// built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionFit {
    pub resolution: u32,
    pub covariate_names: Vec<String>,
    pub fit: ElasticNetFit,
}

/// Squared prediction error in seconds summed over the test rows, plus
/// the sample standard deviation of the squared residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestError {
    pub sum_squared: f64,
    pub residual_sd: f64,
}

/// Evaluates a fit on a held-out table on the seconds scale: predictions
/// are the exponential of the fitted log-mean, using the rescaled
/// coefficients.
pub fn test_error(fit: &ResolutionFit, test: &StudyTable) -> Result<TestError> {
    if fit.resolution != test.resolution {
        return Err(Error::ResolutionMismatch {
            fit: fit.resolution,
            table: test.resolution,
        });
    }
    if fit.covariate_names != test.covariate_names {
        return Err(Error::arg("fit and table covariate names differ"));
    }
    let squared: Vec<f64> = test
        .rows
        .iter()
        .map(|row| {
            let mu = fit.fit.predict(&row.covariates).exp();
            let r = row.performance_s - mu;
            r * r
        })
        .collect();
    let sum: f64 = squared.iter().sum();
    let residual_sd = if squared.len() < 2 {
        0.0
    } else {
        let mean = sum / squared.len() as f64;
        let var = squared.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (squared.len() - 1) as f64;
        var.sqrt()
    };
    Ok(TestError {
        sum_squared: sum,
        residual_sd,
    })
}

/// A maximal run of adjacent non-zero interval coefficients sharing a
/// sign. Interval `k` covers `((k-1) w, k w]` with `w = 12.5 / G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBlock {
    pub first_interval: u32,
    pub last_interval: u32,
    pub v_lo: f64,
    pub v_hi: f64,
    /// +1 or -1.
    pub sign: i8,
}

/// Contiguous non-zero blocks of the interval coefficients of a fit.
pub fn interval_blocks(fit: &ResolutionFit) -> Vec<IntervalBlock> {
    let g = fit.resolution;
    let width = MAX_SPEED_MS / g as f64;
    let coefs = &fit.fit.rescaled[SCALAR_COVARIATES..SCALAR_COVARIATES + g as usize];
    let mut blocks: Vec<IntervalBlock> = Vec::new();
    for (idx, &c) in coefs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let k = idx as u32 + 1;
        let sign: i8 = if c > 0.0 { 1 } else { -1 };
        match blocks.last_mut() {
            Some(block) if block.last_interval == k - 1 && block.sign == sign => {
                block.last_interval = k;
                block.v_hi = k as f64 * width;
            }
            _ => blocks.push(IntervalBlock {
                first_interval: k,
                last_interval: k,
                v_lo: (k - 1) as f64 * width,
                v_hi: k as f64 * width,
                sign,
            }),
        }
    }
    blocks
}

/// A named scalar term of the exported equation, in export units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTerm {
    pub name: String,
    pub coefficient: f64,
}

/// One speed-interval term; times are supplied in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTerm {
    pub v_lo: f64,
    pub v_hi: f64,
    pub per_minute: f64,
}

/// Closed-form performance predictor:
/// `tau * D^alpha * exp(sum scalar terms) * exp(sum interval terms)`.
///
/// Export units: height in metres, oxygen-cost economy in L/kg/km, speed
/// at 4 mM lactate in km/h, session length and interval times in minutes.
/// Only covariates with non-zero coefficients appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveEquation {
    pub resolution: u32,
    pub tau: f64,
    pub alpha: f64,
    pub scalars: Vec<ScalarTerm>,
    pub intervals: Vec<IntervalTerm>,
}

/// Export name and internal-per-export unit factor for each scalar
/// covariate column after `log_distance`.
const SCALAR_EXPORTS: [(&str, f64); 9] = [
    ("weight_kg", 1.0),
    ("height_m", 100.0),
    ("age_y", 1.0),
    ("vo2max_ml_min_kg", 1.0),
    ("vo2max_kmh", 1.0),
    ("economy_l_kg_km", 1000.0),
    ("economy_kcal_kg_km", 1.0),
    ("obla_kmh", 1.0 / 3.6),
    ("mean_session_length_min", 60.0),
];

/// Builds the predictive equation from a fit, rescaling covariate units
/// at export time only.
pub fn export_equation(fit: &ResolutionFit) -> PredictiveEquation {
    let g = fit.resolution;
    let width = MAX_SPEED_MS / g as f64;
    let rescaled = &fit.fit.rescaled;
    let scalars = SCALAR_EXPORTS
        .iter()
        .enumerate()
        .filter(|(idx, _)| rescaled[idx + 1] != 0.0)
        .map(|(idx, (name, factor))| ScalarTerm {
            name: (*name).to_string(),
            coefficient: rescaled[idx + 1] * factor,
        })
        .collect();
    let intervals = (0..g as usize)
        .filter(|idx| rescaled[SCALAR_COVARIATES + idx] != 0.0)
        .map(|idx| IntervalTerm {
            v_lo: idx as f64 * width,
            v_hi: (idx + 1) as f64 * width,
            per_minute: rescaled[SCALAR_COVARIATES + idx] * 60.0,
        })
        .collect();
    PredictiveEquation {
        resolution: g,
        tau: fit.fit.intercept_rescaled.exp(),
        alpha: rescaled[0],
        scalars,
        intervals,
    }
}

/// Evaluates the equation. `scalars` must provide a value for every named
/// term; `interval_minutes` aligns with `equation.intervals`.
pub fn predict(
    equation: &PredictiveEquation,
    distance_m: f64,
    scalars: &BTreeMap<String, f64>,
    interval_minutes: &[f64],
) -> Result<f64> {
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return Err(Error::arg("distance must be positive"));
    }
    if interval_minutes.len() != equation.intervals.len() {
        return Err(Error::arg(format!(
            "expected {} interval times, found {}",
            equation.intervals.len(),
            interval_minutes.len()
        )));
    }
    if interval_minutes.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::arg("interval times must be non-negative minutes"));
    }
    let mut scalar_exponent = 0.0;
    for term in &equation.scalars {
        let value = scalars
            .get(&term.name)
            .ok_or_else(|| Error::arg(format!("missing covariate `{}`", term.name)))?;
        if !value.is_finite() {
            return Err(Error::arg(format!("covariate `{}` must be finite", term.name)));
        }
        scalar_exponent += term.coefficient * value;
    }
    let mut interval_exponent = 0.0;
    for (term, minutes) in equation.intervals.iter().zip(interval_minutes) {
        interval_exponent += term.per_minute * minutes;
    }
    Ok(equation.tau
        * distance_m.powf(equation.alpha)
        * scalar_exponent.exp()
        * interval_exponent.exp())
}

/// Human-readable rendering of the equation.
pub fn render_equation_text(equation: &PredictiveEquation) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "performance_s = {:.4} * distance_m^{:.4}\n",
        equation.tau, equation.alpha
    ));
    if !equation.scalars.is_empty() {
        let terms: Vec<String> = equation
            .scalars
            .iter()
            .map(|t| format!("{:+.4}*{}", t.coefficient, t.name))
            .collect();
        out.push_str(&format!("  * exp({})\n", terms.join(" ")));
    }
    if !equation.intervals.is_empty() {
        let terms: Vec<String> = equation
            .intervals
            .iter()
            .map(|t| format!("{:+.4}*t({:.2},{:.2}]", t.per_minute, t.v_lo, t.v_hi))
            .collect();
        out.push_str(&format!(
            "  * exp({})   with t(a,b] = minutes per session spent at speeds in (a, b]\n",
            terms.join(" ")
        ));
    }
    out
}

/// Everything computed for one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionOutcome {
    pub resolution: u32,
    pub tuning: TuningResult,
    pub fit: ResolutionFit,
    pub test_error: TestError,
    pub interval_blocks: Vec<IntervalBlock>,
}

/// Where a selected-resolution block reappears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPersistence {
    pub v_lo: f64,
    pub v_hi: f64,
    pub sign: i8,
    /// Resolutions with an intersecting same-sign block.
    pub resolutions: Vec<u32>,
}

/// Full multi-resolution report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub seed: u64,
    pub outcomes: Vec<ResolutionOutcome>,
    pub selected_resolution: u32,
    pub equation: PredictiveEquation,
    pub block_persistence: Vec<BlockPersistence>,
    pub notes: Vec<String>,
}

/// Driver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiResConfig {
    pub resolutions: Vec<u32>,
    pub grid: TuningGrid,
    pub cv: CvSettings,
    pub solve: SolveOptions,
    pub seed: u64,
}

impl Default for MultiResConfig {
    fn default() -> Self {
        MultiResConfig {
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            grid: TuningGrid::default(),
            cv: CvSettings::default(),
            solve: SolveOptions::default(),
            seed: 0,
        }
    }
}

/// Runs the whole procedure on pre-split estimation and test data: per
/// resolution, build the tables, tune by cross-validation, refit on the
/// full estimation set and score on the test set; then select the
/// resolution with the smallest test error (ties to the smaller
/// resolution) and export its predictive equation.
///
/// Resolutions run in parallel; seeds are derived per resolution and
/// repeat, so parallel and serial runs produce identical reports.
pub fn select_resolution(
    estimation: &StudyData,
    test: &StudyData,
    config: &MultiResConfig,
) -> Result<ResolutionReport> {
    if config.resolutions.is_empty() {
        return Err(Error::arg("resolution set is empty"));
    }
    let mut resolutions = config.resolutions.clone();
    resolutions.sort_unstable();
    resolutions.dedup();
    // Fail fast on unaligned resolutions before any heavy work.
    if let Some(period) = estimation.periods.periods.first() {
        for &g in &resolutions {
            period.grid.cells_per_interval(g)?;
        }
    }

    let outcomes: Vec<Result<ResolutionOutcome>> = resolutions
        .par_iter()
        .map(|&g| -> Result<ResolutionOutcome> {
            let est_table = estimation.build_table(g)?;
            let test_table = test.build_table(g)?;
            if est_table.rows.is_empty() {
                return Err(Error::arg("estimation table has no rows"));
            }
            let tuning = cross_validate(&est_table, &config.grid, &config.cv, config.seed, &config.solve)?;
            let (x, y) = est_table.design();
            let design = standardize(&x, &y)?;
            let fit = fit_standardized(&design, tuning.lambda2, tuning.l1_fraction, &config.solve)?;
            let resolution_fit = ResolutionFit {
                resolution: g,
                covariate_names: est_table.covariate_names.clone(),
                fit,
            };
            let error = test_error(&resolution_fit, &test_table)?;
            let blocks = interval_blocks(&resolution_fit);
            Ok(ResolutionOutcome {
                resolution: g,
                tuning,
                fit: resolution_fit,
                test_error: error,
                interval_blocks: blocks,
            })
        })
        .collect();
    let outcomes: Vec<ResolutionOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut selected = &outcomes[0];
    for outcome in &outcomes[1..] {
        if outcome.test_error.sum_squared < selected.test_error.sum_squared {
            selected = outcome;
        }
    }

    let equation = export_equation(&selected.fit);
    let block_persistence = selected
        .interval_blocks
        .iter()
        .map(|block| BlockPersistence {
            v_lo: block.v_lo,
            v_hi: block.v_hi,
            sign: block.sign,
            resolutions: outcomes
                .iter()
                .filter(|o| {
                    o.interval_blocks.iter().any(|other| {
                        other.sign == block.sign
                            && other.v_lo < block.v_hi
                            && block.v_lo < other.v_hi
                    })
                })
                .map(|o| o.resolution)
                .collect(),
        })
        .collect();

    Ok(ResolutionReport {
        seed: config.seed,
        selected_resolution: selected.resolution,
        equation,
        block_persistence,
        notes: vec![
            "cross-validation folds are allocated by observation row; only the estimation/test split is by runner".to_string(),
            "confidence intervals for penalised estimates are not computed; the report shows coefficient magnitudes only".to_string(),
        ],
        outcomes,
    })
}

/// Per-resolution coefficient export:
/// `resolution,name,v_lo,v_hi,naive,rescaled`.
pub fn write_coefficients_csv<W: Write>(writer: W, outcomes: &[ResolutionOutcome]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["resolution", "name", "v_lo", "v_hi", "naive", "rescaled"])?;
    for outcome in outcomes {
        let g = outcome.resolution;
        let width = MAX_SPEED_MS / g as f64;
        let fit = &outcome.fit.fit;
        for (j, name) in outcome.fit.covariate_names.iter().enumerate() {
            let (v_lo, v_hi) = if j >= SCALAR_COVARIATES {
                let k = j - SCALAR_COVARIATES;
                (
                    format_f64(k as f64 * width),
                    format_f64((k + 1) as f64 * width),
                )
            } else {
                (String::new(), String::new())
            };
            out.write_record(&[
                g.to_string(),
                name.clone(),
                v_lo,
                v_hi,
                format_f64(fit.naive[j]),
                format_f64(fit.rescaled[j]),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Test-error curve export: `resolution,test_error,residual_sd,lambda2,l1_fraction`.
pub fn write_test_errors_csv<W: Write>(writer: W, outcomes: &[ResolutionOutcome]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["resolution", "test_error", "residual_sd", "lambda2", "l1_fraction"])?;
    for outcome in outcomes {
        out.write_record(&[
            outcome.resolution.to_string(),
            format_f64(outcome.test_error.sum_squared),
            format_f64(outcome.test_error.residual_sd),
            format_f64(outcome.tuning.lambda2),
            format_f64(outcome.tuning.l1_fraction),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Cross-validation surfaces: `resolution,lambda2,l1_fraction,mean_mse`.
pub fn write_cv_surfaces_csv<W: Write>(writer: W, outcomes: &[ResolutionOutcome]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["resolution", "lambda2", "l1_fraction", "mean_mse"])?;
    for outcome in outcomes {
        for point in &outcome.tuning.surface {
            out.write_record(&[
                outcome.resolution.to_string(),
                format_f64(point.lambda2),
                format_f64(point.l1_fraction),
                format_f64(point.mean_mse),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
