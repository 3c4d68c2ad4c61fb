//! Reference problems and checks shared by the property tests and the
//! acceptance run. Each check returns a description of the first failure.
#![allow(dead_code)]

use std::collections::HashSet;

use headhunt::design::{construct_bernoulli, construct_stratified_per_row, MeasurementMatrix};
use headhunt::lasso::{fit_traced, lambda_max, objective, soft_threshold, SolverConfig};
use headhunt::rng::seeded;
use headhunt::space::ModelShape;
use headhunt::{audit, Error};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type Check = Result<(), String>;

pub fn tight() -> SolverConfig {
    SolverConfig {
        tolerance: 1e-13,
        max_sweeps: 200_000,
        ..SolverConfig::default()
    }
}

/// Rows each ablate one head (heads may repeat) or nothing. Columns are then
/// disjoint and the problem separates once the intercept is known.
pub fn orthogonal_problem(seed: u64) -> (MeasurementMatrix, Vec<f64>) {
    let mut rng = seeded(seed);
    let n = rng.random_range(3..12);
    let mut rows: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
    for _ in 0..rng.random_range(0..8) {
        rows.push(vec![rng.random_range(0..n)]);
    }
    // At least one unablated row pins the intercept, so the solution is unique.
    for _ in 0..rng.random_range(1..4) {
        rows.push(vec![]);
    }
    let y: Vec<f64> = (0..rows.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    (MeasurementMatrix::from_rows(n, rows).unwrap(), y)
}

/// Closed form for disjoint single-head rows: for a fixed intercept b each
/// coordinate is soft-thresholded independently; b is the root of the
/// intercept's stationarity condition, found by bisection.
pub fn orthogonal_oracle(matrix: &MeasurementMatrix, y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let m = matrix.n_measurements() as f64;
    let n = matrix.n_heads();
    let t = lambda * m;
    let coefs = |b: f64| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let (z, c) = matrix
                    .rows()
                    .iter()
                    .zip(y)
                    .filter(|(r, _)| r.contains(&j))
                    .fold((0.0, 0.0), |(z, c), (_, &yi)| (z + yi - b, c + 1.0));
                if c == 0.0 {
                    0.0
                } else {
                    soft_threshold(z, t) / c
                }
            })
            .collect()
    };
    let gradient = |b: f64| -> f64 {
        let x = coefs(b);
        matrix
            .rows()
            .iter()
            .zip(y)
            .map(|(r, &yi)| yi - b - r.iter().map(|&j| x[j]).sum::<f64>())
            .sum()
    };
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gradient(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    (b, coefs(b))
}

/// Solver output against the closed form at several penalties.
pub fn check_closed_form(seed: u64, tol: f64) -> Check {
    let (matrix, y) = orthogonal_problem(seed);
    let lmax = lambda_max(&matrix, &y).unwrap();
    for frac in [0.0, 0.05, 0.3, 0.8, 1.2] {
        let lambda = frac * lmax;
        let est = fit_traced(&matrix, &y, lambda, &tight(), None);
        let (b, x) = orthogonal_oracle(&matrix, &y, lambda);
        if (est.intercept - b).abs() > tol {
            return Err(format!("seed {seed} frac {frac}: intercept {} vs {b}", est.intercept));
        }
        for (j, (got, want)) in est.coefficients.iter().zip(&x).enumerate() {
            if (got - want).abs() > tol {
                return Err(format!("seed {seed} frac {frac} x{j}: {got} vs {want}"));
            }
        }
    }
    Ok(())
}

pub fn random_problem(seed: u64) -> (MeasurementMatrix, Vec<f64>, f64) {
    let mut rng = seeded(seed);
    let shape = ModelShape::new(rng.random_range(2..6), rng.random_range(4..16)).unwrap();
    let n = shape.n_heads();
    let m = rng.random_range(n / 2 + 5..2 * n + 10);
    let matrix = if seed.is_multiple_of(2) {
        construct_bernoulli(shape, m, rng.random_range(0.05..0.4), seed).unwrap()
    } else {
        let s = rng.random_range(1..n / 2 + 1);
        let m = m.max(n.div_ceil(s));
        construct_stratified_per_row(shape, m, s, seed).unwrap()
    };
    let truth: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.15) { -rng.random_range(0.05..0.3) } else { 0.0 })
        .collect();
    let noise = Normal::new(0.0, 0.02).unwrap();
    let y: Vec<f64> = matrix
        .rows()
        .iter()
        .map(|r| 0.7 + r.iter().map(|&j| truth[j]).sum::<f64>() + noise.sample(&mut rng))
        .collect();
    let lambda = rng.random_range(0.01..0.9) * lambda_max(&matrix, &y).unwrap();
    (matrix, y, lambda)
}

/// Stationarity of the intercept and subgradient conditions per coordinate,
/// with residuals allowed ten times the solver tolerance.
pub fn check_kkt(seed: u64) -> Check {
    let cfg = SolverConfig::default();
    let (matrix, y, lambda) = random_problem(seed);
    let est = fit_traced(&matrix, &y, lambda, &cfg, None);
    if !est.converged {
        return Err(format!("seed {seed}: did not converge"));
    }
    let m = matrix.n_measurements() as f64;
    let r = est.residuals(&matrix, &y);
    let slack = 10.0 * cfg.tolerance;
    let mean_residual = r.iter().sum::<f64>().abs() / m;
    if mean_residual > slack {
        return Err(format!("seed {seed}: intercept gradient {mean_residual}"));
    }
    for (j, col) in matrix.columns().iter().enumerate() {
        let g = col.iter().map(|&i| r[i]).sum::<f64>() / m;
        let x = est.coefficients[j];
        let ok = if col.is_empty() {
            x == 0.0
        } else if x != 0.0 {
            (g - lambda * x.signum()).abs() <= slack
        } else {
            g.abs() <= lambda + slack
        };
        if !ok {
            return Err(format!("seed {seed} x{j} = {x}: gradient {g} against lambda {lambda}"));
        }
    }
    Ok(())
}

/// The objective after every sweep never exceeds the one before.
pub fn check_monotone(seed: u64) -> Check {
    let (matrix, y, lambda) = random_problem(seed);
    let mut trace = Vec::new();
    let est = fit_traced(&matrix, &y, lambda, &SolverConfig::default(), Some(&mut trace));
    if trace.len() < 2 {
        return Err(format!("seed {seed}: trace has {} entries", trace.len()));
    }
    for (i, w) in trace.windows(2).enumerate() {
        if w[1] > w[0] + 1e-12 * w[0].abs().max(1.0) {
            return Err(format!("seed {seed} sweep {}: {} -> {}", i + 1, w[0], w[1]));
        }
    }
    let final_obj = objective(&matrix, &y, est.intercept, &est.coefficients, lambda);
    if (final_obj - trace.last().unwrap()).abs() > 1e-12 {
        return Err(format!("seed {seed}: reported objective differs from the trace"));
    }
    Ok(())
}

/// Row sums exact and column sums within one of each other, or a coverage
/// error exactly when `M * s < N`.
pub fn check_stratified(shape: ModelShape, m: usize, s: usize, seed: u64) -> Check {
    let n = shape.n_heads();
    let case = format!("N={n} M={m} s={s} seed={seed}");
    let mat = match construct_stratified_per_row(shape, m, s, seed) {
        Err(Error::Coverage { min_measurements, .. }) if m * s < n && min_measurements == n.div_ceil(s) => {
            return Ok(());
        }
        Err(e) => return Err(format!("{case}: {e}")),
        Ok(mat) => mat,
    };
    if m * s < n {
        return Err(format!("{case}: built an undercovering matrix"));
    }
    if mat.n_measurements() != m || mat.row_sums().iter().any(|&r| r != s) {
        return Err(format!("{case}: row sums {:?}", mat.row_sums()));
    }
    let cols = mat.column_sums();
    let lo = *cols.iter().min().unwrap();
    let hi = *cols.iter().max().unwrap();
    if lo != m * s / n || hi - lo > 1 {
        return Err(format!("{case}: column sums span [{lo}, {hi}]"));
    }
    if mat.rows().iter().any(|r| r.iter().collect::<HashSet<_>>().len() != r.len()) {
        return Err(format!("{case}: a row repeats a head"));
    }
    let report = audit(&mat);
    if !report.is_clean() {
        return Err(format!("{case}: {:?}", report.violations));
    }
    Ok(())
}

pub fn column_variance(matrix: &MeasurementMatrix) -> f64 {
    let counts = matrix.column_sums();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Any `(layers, heads)` split of `n`.
pub fn shape_with(n: usize) -> ModelShape {
    let layers = (1..=n.min(64)).rev().find(|&l| n.is_multiple_of(l)).unwrap();
    ModelShape::new(layers, n / layers).unwrap()
}
