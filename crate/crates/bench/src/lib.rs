//! Fixtures shared by the benchmarks.

use headhunt::design::construct_stratified;
use headhunt::oracle::{make_calibrated_oracle, Scenario};
use headhunt::{HeadSet, MeasurementMatrix, ModelShape, PlantedOracle};

/// Noisy gsm8k_like oracle on the full 32x32 model.
pub fn oracle(sigma: f64) -> PlantedOracle {
    make_calibrated_oracle(Scenario::Gsm8kLike).with_noise(sigma, 1)
}

/// A stratified design and the oracle's scores on each of its rows.
pub fn problem(n_measurements: usize, sparsity: f64, seed: u64) -> (MeasurementMatrix, Vec<f64>) {
    let oracle = oracle(0.01);
    let shape = ModelShape::llama_8b();
    let matrix = construct_stratified(shape, n_measurements, sparsity, seed).expect("valid design");
    let y = matrix
        .rows()
        .iter()
        .map(|r| oracle.score(&HeadSet::from_flat(shape, r.iter().copied()).expect("in range")))
        .collect();
    (matrix, y)
}
