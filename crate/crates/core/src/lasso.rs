//! L1-regularised least squares with an unpenalised intercept:
//!
//! ```text
//! minimise  1/(2M) * ||y - (b0 + Phi x)||^2  +  lambda * ||x||_1
//! ```
//!
//! solved by cyclic coordinate descent over a binary design. Columns are
//! never standardised, so a coefficient is the raw change in the observed
//! score caused by ablating that head. Coordinates are visited in ascending
//! column order; after every full sweep that changes something, the solver
//! iterates over the current non-zero coordinates alone until they settle and
//! then re-checks all columns with another full sweep.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::MeasurementMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Regularisation strength: fixed, or chosen by cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Lambda {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Lambda {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Auto => s.serialize_str("auto"),
            Lambda::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Value(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Value(v) => Ok(Lambda::Fixed(v)),
            Repr::Word(w) if w == "auto" => Ok(Lambda::Auto),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "lambda must be a number or \"auto\", got {w:?}"
            ))),
        }
    }
}

impl std::str::FromStr for Lambda {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Lambda::Auto);
        }
        s.parse()
            .map(Lambda::Fixed)
            .map_err(|_| Error::Config(format!("lambda must be a number or 'auto', got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: Lambda,
    /// Convergence threshold on the largest coefficient change in a full sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Number of points on the geometric lambda grid used by `Auto`.
    pub grid_size: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub grid_ratio: f64,
    pub cv_folds: usize,
    pub cv_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Auto,
            tolerance: 1e-7,
            max_sweeps: 10_000,
            grid_size: 30,
            grid_ratio: 1e-3,
            cv_folds: 5,
            cv_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn fixed(lambda: f64) -> Self {
        Self {
            lambda: Lambda::Fixed(lambda),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Lambda::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        if self.lambda == Lambda::Auto {
            if self.grid_size < 2 {
                return Err(Error::Config("lambda grid needs at least 2 points".into()));
            }
            if !(self.grid_ratio > 0.0 && self.grid_ratio < 1.0) {
                return Err(Error::Config("grid_ratio must lie in (0, 1)".into()));
            }
            if self.cv_folds < 2 {
                return Err(Error::Config("cross-validation needs at least 2 folds".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactEstimate {
    /// Estimated unablated score (`b0`).
    pub intercept: f64,
    /// Estimated score change from ablating each head, by flat index.
    pub coefficients: Vec<f64>,
    pub lambda_used: f64,
    pub lambda_max: f64,
    pub sweeps_run: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_validation: Option<CvReport>,
}

impl ImpactEstimate {
    pub fn nonzeros(&self) -> usize {
        self.coefficients.iter().filter(|c| **c != 0.0).count()
    }

    pub fn predict_row(&self, row: &[usize]) -> f64 {
        self.intercept + row.iter().map(|&j| self.coefficients[j]).sum::<f64>()
    }

    /// `y - b0 - Phi x`: the part of the observations the additive model
    /// leaves unexplained.
    pub fn residuals(&self, matrix: &MeasurementMatrix, observations: &[f64]) -> Vec<f64> {
        matrix
            .rows()
            .iter()
            .zip(observations)
            .map(|(row, &y)| y - self.predict_row(row))
            .collect()
    }
}

/// Cross-validation summary for an automatically chosen lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub lambdas: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub nonzeros: Vec<usize>,
    pub min_index: usize,
    pub chosen_index: usize,
    pub folds: usize,
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Column view of a binary design restricted to some rows.
struct Design {
    n_rows: usize,
    /// Local row indices per column.
    cols: Vec<Vec<u32>>,
}

impl Design {
    fn full(matrix: &MeasurementMatrix) -> Self {
        let cols = matrix
            .columns()
            .into_iter()
            .map(|c| c.into_iter().map(|i| i as u32).collect())
            .collect();
        Self {
            n_rows: matrix.n_measurements(),
            cols,
        }
    }

    fn subset(matrix: &MeasurementMatrix, rows: &[usize]) -> Self {
        let mut cols = vec![Vec::new(); matrix.n_heads()];
        for (local, &i) in rows.iter().enumerate() {
            for &j in matrix.row(i) {
                cols[j].push(local as u32);
            }
        }
        Self {
            n_rows: rows.len(),
            cols,
        }
    }

    fn lambda_max(&self, y: &[f64]) -> f64 {
        let m = self.n_rows as f64;
        let mean = y.iter().sum::<f64>() / m;
        self.cols
            .iter()
            .map(|c| (c.iter().map(|&i| y[i as usize] - mean).sum::<f64>() / m).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone)]
struct State {
    intercept: f64,
    x: Vec<f64>,
}

impl State {
    fn zeros(n: usize) -> Self {
        Self {
            intercept: 0.0,
            x: vec![0.0; n],
        }
    }
}

struct Outcome {
    sweeps: usize,
    converged: bool,
}

struct Solver<'a> {
    design: &'a Design,
    y: &'a [f64],
    residual: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(design: &'a Design, y: &'a [f64]) -> Self {
        Self {
            design,
            y,
            residual: vec![0.0; y.len()],
        }
    }

    fn refresh_residual(&mut self, st: &State) {
        self.residual.iter_mut().zip(self.y).for_each(|(r, &y)| *r = y - st.intercept);
        for (col, &xj) in self.design.cols.iter().zip(&st.x) {
            if xj != 0.0 {
                for &i in col {
                    self.residual[i as usize] -= xj;
                }
            }
        }
    }

    fn objective(&self, st: &State, lambda: f64) -> f64 {
        let m = self.design.n_rows as f64;
        let rss: f64 = self.residual.iter().map(|r| r * r).sum();
        rss / (2.0 * m) + lambda * st.x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn update_intercept(&mut self, st: &mut State) -> f64 {
        let m = self.design.n_rows as f64;
        let shift = self.residual.iter().sum::<f64>() / m;
        st.intercept += shift;
        self.residual.iter_mut().for_each(|r| *r -= shift);
        shift.abs()
    }

    fn update_coordinate(&mut self, st: &mut State, j: usize, lambda: f64) -> f64 {
        let col = &self.design.cols[j];
        if col.is_empty() {
            return 0.0;
        }
        let m = self.design.n_rows as f64;
        let count = col.len() as f64;
        let old = st.x[j];
        let rho = (col.iter().map(|&i| self.residual[i as usize]).sum::<f64>() + count * old) / m;
        let new = soft_threshold(rho, lambda) * m / count;
        let delta = new - old;
        if delta != 0.0 {
            for &i in col {
                self.residual[i as usize] -= delta;
            }
            st.x[j] = new;
        }
        delta.abs()
    }

    fn sweep(&mut self, st: &mut State, lambda: f64, active_only: bool) -> f64 {
        let mut max_delta = self.update_intercept(st);
        for j in 0..st.x.len() {
            if active_only && st.x[j] == 0.0 {
                continue;
            }
            max_delta = max_delta.max(self.update_coordinate(st, j, lambda));
        }
        max_delta
    }

    fn solve(
        &mut self,
        st: &mut State,
        lambda: f64,
        tolerance: f64,
        max_sweeps: usize,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Outcome {
        self.refresh_residual(st);
        if let Some(t) = trace.as_deref_mut() {
            t.push(self.objective(st, lambda));
        }
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            let delta = self.sweep(st, lambda, false);
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(st, lambda));
            }
            if delta <= tolerance {
                return Outcome {
                    sweeps,
                    converged: true,
                };
            }
            while sweeps < max_sweeps {
                let delta = self.sweep(st, lambda, true);
                sweeps += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.objective(st, lambda));
                }
                if delta <= tolerance {
                    break;
                }
            }
        }
        Outcome {
            sweeps,
            converged: false,
        }
    }
}

fn check_inputs(matrix: &MeasurementMatrix, observations: &[f64]) -> Result<()> {
    if matrix.n_measurements() == 0 {
        return Err(Error::Input("measurement matrix has no rows".into()));
    }
    if observations.len() != matrix.n_measurements() {
        return Err(Error::Input(format!(
            "{} observations for {} measurements",
            observations.len(),
            matrix.n_measurements()
        )));
    }
    if let Some(i) = observations.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("observation {i} is not finite")));
    }
    Ok(())
}

/// Smallest lambda at which the solution is identically zero.
pub fn lambda_max(matrix: &MeasurementMatrix, observations: &[f64]) -> Result<f64> {
    check_inputs(matrix, observations)?;
    Ok(Design::full(matrix).lambda_max(observations))
}

/// The penalised objective at a given point.
pub fn objective(
    matrix: &MeasurementMatrix,
    observations: &[f64],
    intercept: f64,
    coefficients: &[f64],
    lambda: f64,
) -> f64 {
    let m = matrix.n_measurements() as f64;
    let rss: f64 = matrix
        .rows()
        .iter()
        .zip(observations)
        .map(|(row, &y)| {
            let r = y - intercept - row.iter().map(|&j| coefficients[j]).sum::<f64>();
            r * r
        })
        .sum();
    rss / (2.0 * m) + lambda * coefficients.iter().map(|v| v.abs()).sum::<f64>()
}

/// Fits the model, choosing lambda by cross-validation when configured as
/// `Auto`. Non-convergence is reported through `converged`, not as an error.
pub fn fit(
    matrix: &MeasurementMatrix,
    observations: &[f64],
    config: &SolverConfig,
) -> Result<ImpactEstimate> {
    config.validate()?;
    check_inputs(matrix, observations)?;
    match config.lambda {
        Lambda::Fixed(lambda) => Ok(fit_traced(matrix, observations, lambda, config, None)),
        Lambda::Auto => select_lambda(matrix, observations, config).map(|s| s.estimate),
    }
}

/// Fits at a fixed lambda from a zero start, optionally recording the
/// objective before the first sweep and after every sweep.
pub fn fit_traced(
    matrix: &MeasurementMatrix,
    observations: &[f64],
    lambda: f64,
    config: &SolverConfig,
    trace: Option<&mut Vec<f64>>,
) -> ImpactEstimate {
    let design = Design::full(matrix);
    let mut st = State::zeros(matrix.n_heads());
    let mut solver = Solver::new(&design, observations);
    let out = solver.solve(&mut st, lambda, config.tolerance, config.max_sweeps, trace);
    ImpactEstimate {
        intercept: st.intercept,
        coefficients: st.x,
        lambda_used: lambda,
        lambda_max: design.lambda_max(observations),
        sweeps_run: out.sweeps,
        converged: out.converged,
        cross_validation: None,
    }
}

/// Result of automatic lambda selection, including the full-data estimate at
/// the chosen lambda.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub estimate: ImpactEstimate,
}

/// Geometric grid from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    (0..size)
        .map(|i| lambda_max * ratio.powf(i as f64 / (size - 1) as f64))
        .collect()
}

/// K-fold cross-validated choice of lambda with the one-standard-error rule:
/// among grid values whose CV error is within one standard error of the
/// minimum, take the one with the fewest non-zero coefficients, preferring the
/// larger lambda on ties.
pub fn select_lambda(
    matrix: &MeasurementMatrix,
    observations: &[f64],
    config: &SolverConfig,
) -> Result<LambdaSelection> {
    check_inputs(matrix, observations)?;
    let mut cfg = config.clone();
    cfg.lambda = Lambda::Auto;
    cfg.validate()?;
    let m = matrix.n_measurements();
    if m < cfg.cv_folds {
        return Err(Error::Folds {
            n_rows: m,
            folds: cfg.cv_folds,
        });
    }

    let full = Design::full(matrix);
    let lmax = full.lambda_max(observations);
    // Observations constant up to rounding: nothing to explain.
    if lmax <= 1e-12 * observations.iter().map(|v| v.abs()).fold(1.0, f64::max) {
        let estimate = fit_traced(matrix, observations, lmax, &cfg, None);
        return Ok(LambdaSelection {
            lambda: lmax,
            estimate,
        });
    }
    let grid = lambda_grid(lmax, cfg.grid_size, cfg.grid_ratio);

    // Full-data path with warm starts.
    let mut path = Vec::with_capacity(grid.len());
    {
        let mut st = State::zeros(matrix.n_heads());
        let mut solver = Solver::new(&full, observations);
        for &lambda in &grid {
            let out = solver.solve(&mut st, lambda, cfg.tolerance, cfg.max_sweeps, None);
            path.push((st.clone(), out));
        }
    }

    // Fold assignment from a seeded permutation of the rows.
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seeded(derive_seed(cfg.cv_seed, 0xcf)));
    let mut fold_of = vec![0usize; m];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % cfg.cv_folds;
    }

    let fold_errors: Vec<Vec<f64>> = (0..cfg.cv_folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..m).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..m).filter(|&i| fold_of[i] == k).collect();
            let design = Design::subset(matrix, &train);
            let y_train: Vec<f64> = train.iter().map(|&i| observations[i]).collect();
            let mut st = State::zeros(matrix.n_heads());
            let mut solver = Solver::new(&design, &y_train);
            grid.iter()
                .map(|&lambda| {
                    solver.solve(&mut st, lambda, cfg.tolerance, cfg.max_sweeps, None);
                    test.iter()
                        .map(|&i| {
                            let pred = st.intercept
                                + matrix.row(i).iter().map(|&j| st.x[j]).sum::<f64>();
                            (observations[i] - pred).powi(2)
                        })
                        .sum::<f64>()
                        / test.len() as f64
                })
                .collect()
        })
        .collect();

    let k = cfg.cv_folds as f64;
    let mean_error: Vec<f64> = (0..grid.len())
        .map(|g| fold_errors.iter().map(|f| f[g]).sum::<f64>() / k)
        .collect();
    let standard_error: Vec<f64> = (0..grid.len())
        .map(|g| {
            let mu = mean_error[g];
            let var = fold_errors.iter().map(|f| (f[g] - mu).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        })
        .collect();
    let nonzeros: Vec<usize> = path
        .iter()
        .map(|(st, _)| st.x.iter().filter(|v| **v != 0.0).count())
        .collect();

    let mut min_index = 0;
    for g in 1..grid.len() {
        if mean_error[g] < mean_error[min_index] {
            min_index = g;
        }
    }
    let threshold = mean_error[min_index] + standard_error[min_index];
    let mut chosen_index = min_index;
    for g in 0..grid.len() {
        if mean_error[g] <= threshold
            && (nonzeros[g] < nonzeros[chosen_index]
                || (nonzeros[g] == nonzeros[chosen_index] && g < chosen_index))
        {
            chosen_index = g;
        }
    }

    let (st, out) = &path[chosen_index];
    let lambda = grid[chosen_index];
    let estimate = ImpactEstimate {
        intercept: st.intercept,
        coefficients: st.x.clone(),
        lambda_used: lambda,
        lambda_max: lmax,
        sweeps_run: out.sweeps,
        converged: out.converged,
        cross_validation: Some(CvReport {
            lambdas: grid,
            mean_error,
            standard_error,
            nonzeros,
            min_index,
            chosen_index,
            folds: cfg.cv_folds,
        }),
    };
    Ok(LambdaSelection { lambda, estimate })
}
