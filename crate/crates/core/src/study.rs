//! Monte-Carlo recovery studies on random planted oracles.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::identify::{identify, IdentifyConfig, Strategy};
use crate::lasso::SolverConfig;
use crate::oracle::PlantedOracle;
use crate::rng::derive_seed;
use crate::space::ModelShape;

pub const STUDY_SCHEMA: &str = "headhunt-study/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryGrid {
    pub shapes: Vec<ModelShape>,
    pub k: Vec<usize>,
    pub n_measurements: Vec<usize>,
    pub sparsity: Vec<f64>,
    pub sigma: Vec<f64>,
    pub seeds: usize,
    pub base_seed: u64,
    pub strategy: Strategy,
    /// Planted impacts are drawn from `-impact_range.1..=-impact_range.0`.
    pub impact_range: (f64, f64),
    pub baseline: f64,
    /// Recovery rate at which a cell counts as recovered.
    pub target_rate: f64,
    pub solver: SolverConfig,
}

impl Default for RecoveryGrid {
    fn default() -> Self {
        Self {
            shapes: vec![ModelShape::new(16, 32).expect("valid")],
            k: vec![5],
            n_measurements: vec![50, 100, 200, 400],
            sparsity: vec![0.02],
            sigma: vec![0.01],
            seeds: 20,
            base_seed: 0,
            strategy: Strategy::CsStratified,
            impact_range: (0.05, 0.2),
            baseline: 0.8,
            target_rate: 0.95,
            solver: SolverConfig::default(),
        }
    }
}

impl RecoveryGrid {
    pub fn validate(&self) -> Result<()> {
        if [self.shapes.len(), self.k.len(), self.n_measurements.len(), self.sparsity.len(), self.sigma.len()]
            .contains(&0)
        {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if !self.strategy.is_compressed_sensing() {
            return Err(Error::Config("recovery studies run compressed-sensing strategies".into()));
        }
        let (lo, hi) = self.impact_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("impact_range must satisfy 0 < lo <= hi".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub shape: ModelShape,
    pub k: usize,
    pub n_measurements: usize,
    pub sparsity: f64,
    pub sigma: f64,
    pub trials: usize,
    pub successes: usize,
    /// `None` when the design cannot be built (e.g. too few rows to cover).
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub shape: ModelShape,
    pub k: usize,
    pub sparsity: f64,
    pub sigma: f64,
    /// Smallest M from which every larger grid M reaches the target rate.
    pub m_star: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema: String,
    pub grid: RecoveryGrid,
    pub cells: Vec<CellResult>,
    pub thresholds: Vec<Threshold>,
}

struct Cell {
    shape: ModelShape,
    k: usize,
    m: usize,
    sparsity: f64,
    sigma: f64,
}

/// Exact recovery of the planted set for one trial; `Err` if the design
/// cannot be built.
fn trial(grid: &RecoveryGrid, cell: &Cell, index: usize) -> Result<bool> {
    let seed = derive_seed(grid.base_seed, index as u64);
    let oracle = PlantedOracle::random(cell.shape, cell.k, grid.impact_range, grid.baseline, seed)?
        .with_noise(cell.sigma, derive_seed(seed, 1));
    let mut truth = oracle.ground_truth_top_k(cell.k);
    truth.sort();
    let gateway = Gateway::new(Arc::new(oracle)).with_concurrency(1);
    let cfg = IdentifyConfig {
        k: cell.k,
        strategy: grid.strategy,
        n_measurements: cell.m,
        density: cell.sparsity,
        seed: derive_seed(seed, 2),
        solver: grid.solver.clone(),
        audit_determinism: false,
        ..IdentifyConfig::default()
    };
    let mut got = identify(&cfg, &gateway)?.selected;
    got.sort();
    Ok(got == truth)
}

/// Runs every cell of the grid, trials in parallel, results in grid order.
/// Trial `i` of every cell shares its planted oracle, so cells differ only in
/// the design.
pub fn recovery_study(grid: &RecoveryGrid) -> Result<StudyReport> {
    grid.validate()?;
    let mut cells = Vec::new();
    for &shape in &grid.shapes {
        for &k in &grid.k {
            for &sparsity in &grid.sparsity {
                for &sigma in &grid.sigma {
                    for &m in &grid.n_measurements {
                        cells.push(Cell { shape, k, m, sparsity, sigma });
                    }
                }
            }
        }
    }
    let outcomes: Vec<Vec<Result<bool>>> = cells
        .par_iter()
        .map(|cell| (0..grid.seeds).into_par_iter().map(|i| trial(grid, cell, i)).collect())
        .collect();

    let results: Vec<CellResult> = cells
        .iter()
        .zip(outcomes)
        .map(|(cell, runs)| {
            let error = runs.iter().find_map(|r| r.as_ref().err().map(|e| e.to_string()));
            let successes = runs.iter().filter(|r| matches!(r, Ok(true))).count();
            CellResult {
                shape: cell.shape,
                k: cell.k,
                n_measurements: cell.m,
                sparsity: cell.sparsity,
                sigma: cell.sigma,
                trials: grid.seeds,
                successes,
                rate: error.is_none().then(|| successes as f64 / grid.seeds as f64),
                error,
            }
        })
        .collect();

    let mut thresholds: Vec<Threshold> = Vec::new();
    for group in results.chunk_by(|a, b| (a.shape, a.k, a.sparsity, a.sigma) == (b.shape, b.k, b.sparsity, b.sigma)) {
        let mut by_m: Vec<&CellResult> = group.iter().collect();
        by_m.sort_by_key(|c| c.n_measurements);
        let mut m_star = None;
        for c in by_m.iter().rev() {
            if c.rate.is_some_and(|r| r >= grid.target_rate) {
                m_star = Some(c.n_measurements);
            } else {
                break;
            }
        }
        let first = group[0].clone();
        thresholds.push(Threshold {
            shape: first.shape,
            k: first.k,
            sparsity: first.sparsity,
            sigma: first.sigma,
            m_star,
        });
    }

    Ok(StudyReport {
        schema: STUDY_SCHEMA.into(),
        grid: grid.clone(),
        cells: results,
        thresholds,
    })
}

impl StudyReport {
    /// Rate table, one line per cell, then the thresholds.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:>2}  {:>6}  {:>8}  {:>6}  {:>7}",
            "N", "k", "M", "sparsity", "sigma", "rate"
        );
        for c in &self.cells {
            let rate = match c.rate {
                Some(r) => format!("{:.3}", r),
                None => "n/a".into(),
            };
            let _ = writeln!(
                out,
                "{:>6}  {:>2}  {:>6}  {:>8}  {:>6}  {:>7}",
                c.shape.n_heads(),
                c.k,
                c.n_measurements,
                c.sparsity,
                c.sigma,
                rate
            );
        }
        for t in &self.thresholds {
            let m = t.m_star.map(|m| m.to_string()).unwrap_or_else(|| "none".into());
            let _ = writeln!(
                out,
                "threshold N={} k={} sparsity={} sigma={}: M*={m}",
                t.shape.n_heads(),
                t.k,
                t.sparsity,
                t.sigma
            );
        }
        out
    }
}
