mod support;

use headhunt::design::{construct_bernoulli, construct_stratified, MeasurementMatrix};
use headhunt::lasso::{fit, fit_traced, lambda_max, Lambda, SolverConfig};
use headhunt::rng::seeded;
use headhunt::space::ModelShape;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use support::{check_closed_form, check_kkt, check_monotone, random_problem, tight};

#[test]
fn orthogonal_designs_match_closed_form() {
    for seed in 0..40 {
        check_closed_form(seed, 1e-8).unwrap();
    }
}

#[test]
fn kkt_conditions_hold_on_random_problems() {
    for seed in 0..50 {
        check_kkt(seed).unwrap();
    }
}

#[test]
fn objective_never_increases_across_sweeps() {
    for seed in 0..50 {
        check_monotone(seed).unwrap();
    }
}

#[test]
fn lambda_above_max_gives_null_solution() {
    for seed in 0..20 {
        let (matrix, y, _) = random_problem(seed);
        let lmax = lambda_max(&matrix, &y).unwrap();
        let est = fit_traced(&matrix, &y, lmax * 1.000001, &SolverConfig::default(), None);
        assert!(est.coefficients.iter().all(|&x| x == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((est.intercept - mean).abs() <= 1e-12);
    }
}

/// Dense, overdetermined designs have a unique solution, so any column order
/// must reach it.
#[test]
fn permuting_columns_permutes_coefficients() {
    for seed in 0..10 {
        let mut rng = seeded(seed + 1000);
        let shape = ModelShape::new(2, 10).unwrap();
        let matrix = construct_bernoulli(shape, 80, 0.3, seed).unwrap();
        let y: Vec<f64> = (0..80).map(|_| rng.random_range(0.3..0.9)).collect();
        let lambda = 0.05 * lambda_max(&matrix, &y).unwrap();

        let mut perm: Vec<usize> = (0..20).collect();
        perm.reverse();
        perm.swap(3, 11);
        let permuted = MeasurementMatrix::from_rows(
            20,
            matrix
                .rows()
                .iter()
                .map(|r| {
                    let mut r: Vec<usize> = r.iter().map(|&j| perm[j]).collect();
                    r.sort();
                    r
                })
                .collect(),
        )
        .unwrap();
        let a = fit_traced(&matrix, &y, lambda, &tight(), None);
        let b = fit_traced(&permuted, &y, lambda, &tight(), None);
        for (j, &pj) in perm.iter().enumerate() {
            assert!((a.coefficients[j] - b.coefficients[pj]).abs() <= 1e-7, "seed {seed} col {j}");
        }
        assert!((a.intercept - b.intercept).abs() <= 1e-7);
    }
}

#[test]
fn permuting_rows_changes_nothing() {
    for seed in 0..10 {
        let (matrix, y, lambda) = random_problem(seed);
        let mut idx: Vec<usize> = (0..matrix.n_measurements()).collect();
        idx.reverse();
        let permuted = matrix.select_rows(&idx);
        let py: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let a = fit_traced(&matrix, &y, lambda, &tight(), None);
        let b = fit_traced(&permuted, &py, lambda, &tight(), None);
        for (x, z) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((x - z).abs() <= 1e-9);
        }
    }
}

#[test]
fn scaling_observations_and_lambda_scales_solution() {
    for seed in 0..20 {
        let (matrix, y, lambda) = random_problem(seed);
        let a = fit_traced(&matrix, &y, lambda, &tight(), None);
        for scale in [0.1, 3.0, 250.0] {
            let sy: Vec<f64> = y.iter().map(|v| v * scale).collect();
            let b = fit_traced(&matrix, &sy, lambda * scale, &tight(), None);
            assert!((b.intercept - scale * a.intercept).abs() <= 1e-7 * scale);
            for (x, z) in a.coefficients.iter().zip(&b.coefficients) {
                assert!((z - scale * x).abs() <= 1e-7 * scale, "seed {seed} scale {scale}");
            }
        }
    }
}

#[test]
fn pure_noise_selects_few_heads() {
    let shape = ModelShape::new(8, 32).unwrap();
    let cfg = SolverConfig::default();
    let sparse_enough = (0..200u64)
        .into_par_iter()
        .filter(|&seed| {
            let matrix = construct_stratified(shape, 100, 0.05, seed).unwrap();
            let noise = Normal::new(0.5, 0.01).unwrap();
            let mut rng = seeded(seed ^ 0xabcdef);
            let y: Vec<f64> = (0..100).map(|_| noise.sample(&mut rng)).collect();
            let est = fit(&matrix, &y, &cfg).unwrap();
            est.nonzeros() as f64 <= 0.05 * shape.n_heads() as f64
        })
        .count();
    assert!(sparse_enough >= 180, "{sparse_enough}/200");
}

#[test]
fn strong_planted_signal_survives_auto_lambda() {
    // Smallest impact 0.05 against noise 0.005.
    let shape = ModelShape::new(16, 32).unwrap();
    for seed in 0..20u64 {
        let oracle = headhunt::PlantedOracle::random(shape, 5, (0.05, 0.2), 0.8, seed)
            .unwrap()
            .with_noise(0.005, seed);
        let matrix = construct_stratified(shape, 200, 0.02, seed).unwrap();
        let y: Vec<f64> = matrix
            .rows()
            .iter()
            .map(|r| oracle.score(&headhunt::HeadSet::from_flat(shape, r.iter().copied()).unwrap()))
            .collect();
        let est = fit(&matrix, &y, &SolverConfig::default()).unwrap();
        for h in oracle.impacts.keys() {
            assert!(est.coefficients[shape.flat_index(*h).unwrap()] < 0.0, "seed {seed}: {h} dropped");
        }
    }
}

#[test]
fn noise_free_planted_top_five_is_exact() {
    let shape = ModelShape::new(16, 32).unwrap();
    for seed in 0..20u64 {
        let oracle = headhunt::PlantedOracle::random(shape, 5, (0.05, 0.2), 0.8, seed).unwrap();
        let matrix = construct_stratified(shape, 200, 0.02, seed).unwrap();
        let y: Vec<f64> = matrix
            .rows()
            .iter()
            .map(|r| oracle.score(&headhunt::HeadSet::from_flat(shape, r.iter().copied()).unwrap()))
            .collect();
        let est = fit(&matrix, &y, &SolverConfig::default()).unwrap();
        let sel = headhunt::identify::select_top_k(shape, &est.coefficients, 5, &[]);
        let mut truth = oracle.ground_truth_top_k(5);
        truth.sort();
        let mut got = sel.heads;
        got.sort();
        assert_eq!(got, truth, "seed {seed}");
    }
}

#[test]
fn fixed_lambda_config_round_trips() {
    let cfg = SolverConfig::fixed(0.01);
    assert_eq!(cfg.lambda, Lambda::Fixed(0.01));
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<SolverConfig>(&text).unwrap(), cfg);
}
