//! In-process evaluator with planted ground truth.
//!
//! The score of an ablation set `A` is
//!
//! ```text
//! clamp(baseline + sum_{h in A} impact[h] + sum_{pairs in A} interaction + noise(seed, A), 0, 1)
//! ```
//!
//! Noise is a deterministic function of the seed and the sorted set, so
//! repeated queries agree exactly, as the gateway requires of any evaluator.
//! The empty set always returns the baseline exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{AblationQuery, Evaluation, Evaluator, EvaluatorInfo};
use crate::rng::{hash_indices, seeded};
use crate::space::{parse_head_list, HeadId, HeadSet, ModelShape};

/// Nominal evaluation-subset size reported by the oracle.
pub const ORACLE_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: HeadId,
    pub b: HeadId,
    /// Added when both heads are ablated.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOracle {
    pub task: String,
    pub shape: ModelShape,
    pub baseline: f64,
    /// Planted per-head effects; negative means ablation hurts.
    pub impacts: BTreeMap<HeadId, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub clamp: bool,
    /// Head order whose cumulative ablation reproduces a calibration curve.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration_order: Vec<HeadId>,
}

fn default_true() -> bool {
    true
}

impl PlantedOracle {
    pub fn new(task: impl Into<String>, shape: ModelShape, baseline: f64) -> Self {
        Self {
            task: task.into(),
            shape,
            baseline,
            impacts: BTreeMap::new(),
            interactions: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
            clamp: true,
            calibration_order: Vec::new(),
        }
    }

    pub fn with_impact(mut self, head: HeadId, impact: f64) -> Result<Self> {
        self.shape.check(head)?;
        self.impacts.insert(head, impact);
        Ok(self)
    }

    pub fn with_interaction(mut self, a: HeadId, b: HeadId, value: f64) -> Result<Self> {
        self.shape.check(a)?;
        self.shape.check(b)?;
        if a == b {
            return Err(Error::Config(format!("interaction of {a} with itself")));
        }
        self.interactions.push(Interaction { a, b, value });
        Ok(self)
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }

    /// `k` heads with impacts drawn uniformly from `-magnitude.1..=-magnitude.0`,
    /// placed uniformly at random.
    pub fn random(
        shape: ModelShape,
        k: usize,
        magnitude: (f64, f64),
        baseline: f64,
        seed: u64,
    ) -> Result<Self> {
        if k > shape.n_heads() {
            return Err(Error::Config(format!("cannot plant {k} heads in {shape}")));
        }
        let mut rng = seeded(seed);
        let mut oracle = Self::new("random", shape, baseline);
        for idx in sample(&mut rng, shape.n_heads(), k).into_iter() {
            let v = rng.random_range(magnitude.0..=magnitude.1);
            oracle.impacts.insert(shape.from_flat(idx)?, -v);
        }
        Ok(oracle)
    }

    /// Unclamped score.
    pub fn raw_score(&self, set: &HeadSet) -> f64 {
        let mut score = self.baseline;
        for h in set.iter() {
            if let Some(v) = self.impacts.get(h) {
                score += v;
            }
        }
        for i in &self.interactions {
            if set.contains(&i.a) && set.contains(&i.b) {
                score += i.value;
            }
        }
        if self.noise_sigma > 0.0 && !set.is_empty() {
            let z: f64 = seeded(hash_indices(self.seed, &set.flat_indices())).sample(StandardNormal);
            score += self.noise_sigma * z;
        }
        score
    }

    pub fn score(&self, set: &HeadSet) -> f64 {
        let raw = self.raw_score(set);
        if self.clamp {
            raw.clamp(0.0, 1.0)
        } else {
            raw
        }
    }

    /// Whether the score of `set` is held at 0 or 1 by clamping.
    pub fn would_clamp(&self, set: &HeadSet) -> bool {
        let raw = self.raw_score(set);
        self.clamp && !(0.0..=1.0).contains(&raw)
    }

    /// The `k` most negative planted impacts, ties broken by flat index.
    pub fn ground_truth_top_k(&self, k: usize) -> Vec<HeadId> {
        let mut planted: Vec<(HeadId, f64)> = self.impacts.iter().map(|(h, v)| (*h, *v)).collect();
        planted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        planted.into_iter().take(k).map(|(h, _)| h).collect()
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.baseline) {
            return Err(Error::Config(format!("baseline {} outside [0, 1]", self.baseline)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be finite and >= 0".into()));
        }
        for h in self.impacts.keys().chain(&self.calibration_order) {
            self.shape.check(*h)?;
        }
        Ok(())
    }
}

pub fn oracle_evaluate(oracle: &PlantedOracle, ablated: &HeadSet) -> Result<f64> {
    for h in ablated.iter() {
        oracle.shape.check(*h)?;
    }
    Ok(oracle.score(ablated))
}

impl Evaluator for PlantedOracle {
    fn info(&self) -> EvaluatorInfo {
        let mut metadata = serde_json::Map::new();
        metadata.insert("evaluator".into(), "planted_oracle".into());
        metadata.insert("noise_sigma".into(), self.noise_sigma.into());
        EvaluatorInfo {
            task: self.task.clone(),
            shape: self.shape,
            metadata,
        }
    }

    fn evaluate(&self, query: &AblationQuery) -> Result<Evaluation> {
        Ok(Evaluation {
            accuracy: oracle_evaluate(self, &query.ablated)?,
            n_samples: ORACLE_SAMPLES,
        })
    }

    fn evaluate_many(&self, queries: &[AblationQuery], concurrency: usize) -> Vec<Result<Evaluation>> {
        if concurrency <= 1 {
            return queries.iter().map(|q| self.evaluate(q)).collect();
        }
        queries.par_iter().map(|q| self.evaluate(q)).collect()
    }

    fn default_concurrency(&self) -> usize {
        usize::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Gsm8kLike,
    MbppLike,
    SwearLike,
    WeakLocalization,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Gsm8kLike,
        Scenario::MbppLike,
        Scenario::SwearLike,
        Scenario::WeakLocalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Gsm8kLike => "gsm8k_like",
            Scenario::MbppLike => "mbpp_like",
            Scenario::SwearLike => "swear_like",
            Scenario::WeakLocalization => "weak_localization",
        }
    }

    /// Accuracy after cumulatively ablating 0..=5 heads, as fractions.
    pub fn calibration_curve(self) -> &'static [f64] {
        match self {
            Scenario::Gsm8kLike => &[0.785, 0.504, 0.478, 0.447, 0.389, 0.301],
            Scenario::MbppLike => &[0.584, 0.570, 0.498, 0.444, 0.430, 0.424],
            Scenario::SwearLike => &[1.000, 0.182, 0.250, 0.099, 0.047, 0.146],
            Scenario::WeakLocalization => &[0.459],
        }
    }

    /// Planted heads in calibration order.
    fn heads(self) -> &'static str {
        match self {
            Scenario::Gsm8kLike => "L15H13, L16H2, L12H12, L16H21, L13H18",
            Scenario::MbppLike => "L15H24, L1H28, L24H31, L31H24, L31H25",
            Scenario::SwearLike => "L11H2, L26H7, L14H12, L1H1, L8H15",
            Scenario::WeakLocalization => "L31H14, L24H14, L27H6, L11H0, L27H13",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// Number of heads carrying a small effect in the weak-localization regime.
pub const WEAK_SUPPORT: usize = 40;
/// Largest single effect in the weak-localization regime.
pub const WEAK_MAX_IMPACT: f64 = 0.0055;

/// Oracle on a 32x32 model whose cumulative ablation curve, in
/// `calibration_order`, reproduces the scenario's calibration curve exactly
/// (impacts are consecutive differences of the curve). The weak-localization
/// scenario instead spreads many tiny effects so that no five heads remove
/// more than 0.03 of the score.
pub fn make_calibrated_oracle(scenario: Scenario) -> PlantedOracle {
    let shape = ModelShape::llama_8b();
    let heads = parse_head_list(scenario.heads(), shape).expect("static head lists are valid");
    let curve = scenario.calibration_curve();
    let mut oracle = PlantedOracle::new(scenario.name(), shape, curve[0]);
    match scenario {
        Scenario::WeakLocalization => {
            let mut rng = seeded(0x3d_0c1b);
            let mut placed: Vec<HeadId> = heads.clone();
            while placed.len() < WEAK_SUPPORT {
                let h = shape
                    .from_flat(rng.random_range(0..shape.n_heads()))
                    .expect("in range");
                if !placed.contains(&h) {
                    placed.push(h);
                }
            }
            for (i, h) in placed.into_iter().enumerate() {
                let v = if i < heads.len() {
                    WEAK_MAX_IMPACT - 0.0005 * i as f64
                } else {
                    rng.random_range(0.0005..0.0035)
                };
                oracle.impacts.insert(h, -v);
            }
            oracle.calibration_order = heads;
        }
        _ => {
            for (i, h) in heads.iter().enumerate() {
                oracle.impacts.insert(*h, curve[i + 1] - curve[i]);
            }
            oracle.calibration_order = heads;
        }
    }
    oracle
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h(l: usize, i: usize) -> HeadId {
        HeadId::new(l, i)
    }

    #[test]
    fn empty_set_is_baseline() {
        let o = make_calibrated_oracle(Scenario::Gsm8kLike).with_noise(0.05, 3);
        assert_eq!(o.score(&HeadSet::empty(o.shape)), 0.785);
    }

    #[test]
    fn top_one_gsm8k_drop() {
        let o = PlantedOracle::new("t", ModelShape::llama_8b(), 0.785)
            .with_impact(h(15, 13), -0.281)
            .unwrap();
        let s = HeadSet::from_heads(o.shape, [h(15, 13)]).unwrap();
        assert_abs_diff_eq!(o.score(&s), 0.504, epsilon = 1e-12);
    }

    #[test]
    fn clamps_at_zero() {
        let shape = ModelShape::new(1, 3).unwrap();
        let mut o = PlantedOracle::new("t", shape, 0.5);
        for i in 0..3 {
            o = o.with_impact(h(0, i), -0.3).unwrap();
        }
        let all = HeadSet::from_flat(shape, 0..3).unwrap();
        assert_eq!(o.score(&all), 0.0);
        assert!(o.would_clamp(&all));
        assert!(!o.would_clamp(&HeadSet::from_flat(shape, [0]).unwrap()));
    }

    #[test]
    fn noise_is_a_function_of_the_set() {
        let o = make_calibrated_oracle(Scenario::MbppLike).with_noise(0.01, 9);
        let s = HeadSet::from_flat(o.shape, [3, 70, 900]).unwrap();
        let first = o.score(&s);
        for _ in 0..100 {
            assert_eq!(o.score(&s).to_bits(), first.to_bits());
        }
        let other = o.clone().with_noise(0.01, 10);
        assert_ne!(other.score(&s), first);
    }

    #[test]
    fn interactions_apply_only_to_pairs() {
        let shape = ModelShape::new(1, 4).unwrap();
        let o = PlantedOracle::new("t", shape, 0.9)
            .with_impact(h(0, 0), -0.2)
            .unwrap()
            .with_impact(h(0, 1), -0.2)
            .unwrap()
            .with_interaction(h(0, 0), h(0, 1), 0.2)
            .unwrap();
        let s = |i: &[usize]| o.score(&HeadSet::from_flat(shape, i.iter().copied()).unwrap());
        assert_abs_diff_eq!(s(&[0]), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(s(&[0, 1]), 0.7, epsilon = 1e-12);
        assert!(o.clone().with_interaction(h(0, 0), h(0, 0), 1.0).is_err());
    }

    #[test]
    fn calibrated_curves_are_exact() {
        for sc in [Scenario::Gsm8kLike, Scenario::MbppLike, Scenario::SwearLike] {
            let o = make_calibrated_oracle(sc);
            let mut set = HeadSet::empty(o.shape);
            let curve = sc.calibration_curve();
            assert_abs_diff_eq!(o.score(&set), curve[0], epsilon = 1e-12);
            for (k, head) in o.calibration_order.iter().enumerate() {
                set.insert(*head).unwrap();
                assert_abs_diff_eq!(o.score(&set), curve[k + 1], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn weak_regime_caps_top_five() {
        let o = make_calibrated_oracle(Scenario::WeakLocalization);
        assert_eq!(o.impacts.len(), WEAK_SUPPORT);
        let top = o.ground_truth_top_k(5);
        let set = HeadSet::from_heads(o.shape, top).unwrap();
        let drop = o.baseline - o.score(&set);
        assert!(drop <= 0.03 && drop > 0.02, "{drop}");
    }

    #[test]
    fn ground_truth_ordering() {
        let shape = ModelShape::new(1, 3).unwrap();
        let o = PlantedOracle::new("t", shape, 0.5)
            .with_impact(h(0, 0), -0.3)
            .unwrap()
            .with_impact(h(0, 1), -0.1)
            .unwrap()
            .with_impact(h(0, 2), 0.1)
            .unwrap();
        assert_eq!(o.ground_truth_top_k(2), vec![h(0, 0), h(0, 1)]);
        assert!(o.ground_truth_top_k(0).is_empty());
    }

    #[test]
    fn scenario_names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
        }
        assert!(matches!("nope".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn oracle_document_round_trip() {
        let o = make_calibrated_oracle(Scenario::Gsm8kLike)
            .with_interaction(h(1, 1), h(2, 2), 0.05)
            .unwrap();
        let json = serde_json::to_string(&o).unwrap();
        let back: PlantedOracle = serde_json::from_str(&json).unwrap();
        assert_eq!(back, o);
    }
}
