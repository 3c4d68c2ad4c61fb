//! The single path by which strategies obtain scores: "accuracy of the model
//! with this head set ablated".
//!
//! A [`Gateway`] wraps an [`Evaluator`] with a per-experiment cache keyed by
//! the sorted flat indices of the ablation set, and a [`BudgetLedger`] that
//! counts real evaluator round-trips. Identical queries are answered from the
//! cache, so the ledger always equals the number of distinct sets evaluated.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::splitmix64;
use crate::space::{HeadId, HeadSet, ModelShape};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationQuery {
    pub id: String,
    pub ablated: HeadSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Score in `[0, 1]`, higher is better.
    pub accuracy: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub query: AblationQuery,
    pub accuracy: f64,
    pub n_samples: usize,
    /// Seconds spent in the evaluator; zero for cache hits.
    pub wall_time: f64,
}

/// What an evaluator reports about itself (the handshake, for subprocesses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorInfo {
    pub task: String,
    pub shape: ModelShape,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub metadata: serde_json::Map<String, Value>,
}

pub trait Evaluator: Send + Sync {
    fn info(&self) -> EvaluatorInfo;

    fn evaluate(&self, query: &AblationQuery) -> Result<Evaluation>;

    /// Evaluates several queries, returning results in input order. The
    /// default runs them on up to `concurrency` scoped threads.
    fn evaluate_many(&self, queries: &[AblationQuery], concurrency: usize) -> Vec<Result<Evaluation>> {
        if concurrency <= 1 || queries.len() <= 1 {
            return queries.iter().map(|q| self.evaluate(q)).collect();
        }
        let chunk = queries.len().div_ceil(concurrency);
        std::thread::scope(|scope| {
            let handles: Vec<_> = queries
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|q| self.evaluate(q)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluator thread panicked"))
                .collect()
        })
    }

    /// Concurrency a gateway should use by default.
    fn default_concurrency(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    /// Distinct evaluator round-trips, the baseline included.
    pub evaluations_used: usize,
    pub cache_hits: usize,
    /// Re-issued queries used only to check evaluator determinism.
    #[serde(default)]
    pub audit_evaluations: usize,
}

impl BudgetLedger {
    /// The count without the baseline evaluation, which is how evaluation
    /// budgets are usually quoted (N for one-shot greedy, M for CS).
    pub fn excluding_baseline(&self) -> usize {
        self.evaluations_used.saturating_sub(1)
    }
}

pub struct Gateway {
    evaluator: Arc<dyn Evaluator>,
    info: EvaluatorInfo,
    concurrency: usize,
    cache: Mutex<HashMap<Vec<usize>, MeasurementRecord>>,
    ledger: Mutex<BudgetLedger>,
    next_id: AtomicU64,
}

impl Gateway {
    pub fn new(evaluator: Arc<dyn Evaluator>) -> Self {
        let concurrency = evaluator.default_concurrency().max(1);
        let info = evaluator.info();
        Self {
            evaluator,
            info,
            concurrency,
            cache: Mutex::new(HashMap::new()),
            ledger: Mutex::new(BudgetLedger::default()),
            next_id: AtomicU64::new(0),
        }
    }

    pub fn with_concurrency(mut self, concurrency: usize) -> Self {
        self.concurrency = concurrency.max(1);
        self
    }

    /// A fresh experiment over the same evaluator: empty cache and ledger.
    pub fn session(&self) -> Self {
        Self::new(Arc::clone(&self.evaluator)).with_concurrency(self.concurrency)
    }

    pub fn evaluator(&self) -> &Arc<dyn Evaluator> {
        &self.evaluator
    }

    pub fn info(&self) -> &EvaluatorInfo {
        &self.info
    }

    pub fn shape(&self) -> ModelShape {
        self.info.shape
    }

    pub fn ledger(&self) -> BudgetLedger {
        *self.ledger.lock().unwrap()
    }

    fn next_query_id(&self) -> String {
        format!("q{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn validate(&self, set: &HeadSet) -> Result<()> {
        let shape = self.shape();
        for h in set.iter() {
            shape.check(*h)?;
        }
        Ok(())
    }

    fn check_evaluation(id: &str, e: &Evaluation) -> Result<()> {
        if e.accuracy.is_finite() && (0.0..=1.0).contains(&e.accuracy) {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "query {id}: accuracy {} is outside [0, 1]",
                e.accuracy
            )))
        }
    }

    /// Score of the model with `set` ablated.
    pub fn evaluate(&self, set: &HeadSet) -> Result<MeasurementRecord> {
        self.evaluate_batch(std::slice::from_ref(set))
            .pop()
            .expect("one result per query")
    }

    /// Checks heads against the evaluator's shape before building the query.
    pub fn evaluate_heads(&self, heads: &[HeadId]) -> Result<MeasurementRecord> {
        let set = HeadSet::from_heads(self.shape(), heads.iter().copied())?;
        self.evaluate(&set)
    }

    pub fn baseline(&self) -> Result<f64> {
        Ok(self.evaluate(&HeadSet::empty(self.shape()))?.accuracy)
    }

    /// Evaluates queries, answering repeats from the cache. Output order
    /// equals input order; a failed query yields an error in its slot while
    /// the others still complete.
    pub fn evaluate_batch(&self, sets: &[HeadSet]) -> Vec<Result<MeasurementRecord>> {
        let mut out: Vec<Option<Result<MeasurementRecord>>> = (0..sets.len()).map(|_| None).collect();
        let mut pending: Vec<(Vec<usize>, AblationQuery)> = Vec::new();
        let mut waiting: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
        {
            let cache = self.cache.lock().unwrap();
            let mut ledger = self.ledger.lock().unwrap();
            for (slot, set) in sets.iter().enumerate() {
                if let Err(e) = self.validate(set) {
                    out[slot] = Some(Err(e));
                    continue;
                }
                let key = set.flat_indices();
                if let Some(rec) = cache.get(&key) {
                    ledger.cache_hits += 1;
                    out[slot] = Some(Ok(MeasurementRecord {
                        wall_time: 0.0,
                        ..rec.clone()
                    }));
                } else if let Some(slots) = waiting.get_mut(&key) {
                    ledger.cache_hits += 1;
                    slots.push(slot);
                } else {
                    waiting.insert(key.clone(), vec![slot]);
                    pending.push((
                        key,
                        AblationQuery {
                            id: self.next_query_id(),
                            ablated: set.clone(),
                        },
                    ));
                }
            }
        }

        if !pending.is_empty() {
            let queries: Vec<AblationQuery> = pending.iter().map(|(_, q)| q.clone()).collect();
            let start = Instant::now();
            let results = self.evaluator.evaluate_many(&queries, self.concurrency);
            let per_query = start.elapsed().as_secs_f64() / queries.len() as f64;
            let mut cache = self.cache.lock().unwrap();
            let mut ledger = self.ledger.lock().unwrap();
            for ((key, query), result) in pending.into_iter().zip(results) {
                let slots = waiting.remove(&key).unwrap_or_default();
                let result = match result {
                    Ok(e) => {
                        ledger.evaluations_used += 1;
                        Self::check_evaluation(&query.id, &e).map(|_| {
                            let rec = MeasurementRecord {
                                query,
                                accuracy: e.accuracy,
                                n_samples: e.n_samples,
                                wall_time: per_query,
                            };
                            cache.insert(key, rec.clone());
                            rec
                        })
                    }
                    Err(e) => Err(e),
                };
                for (n, &slot) in slots.iter().enumerate() {
                    out[slot] = Some(if n == 0 {
                        clone_result(&result)
                    } else {
                        clone_result(&result).map(|r| MeasurementRecord { wall_time: 0.0, ..r })
                    });
                }
            }
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }

    /// Scores for every set, failing on the first error.
    pub fn accuracies(&self, sets: &[HeadSet]) -> Result<Vec<f64>> {
        self.evaluate_batch(sets)
            .into_iter()
            .map(|r| r.map(|rec| rec.accuracy))
            .collect()
    }

    /// Re-issues one previously answered query, chosen by `seed`, bypassing
    /// the cache, and requires a bit-identical answer.
    pub fn audit_determinism(&self, seed: u64) -> Result<()> {
        let picked = {
            let cache = self.cache.lock().unwrap();
            if cache.is_empty() {
                return Ok(());
            }
            let mut keys: Vec<&Vec<usize>> = cache.keys().collect();
            keys.sort();
            let key = keys[(splitmix64(seed) % keys.len() as u64) as usize];
            cache[key].clone()
        };
        let query = AblationQuery {
            id: self.next_query_id(),
            ablated: picked.query.ablated.clone(),
        };
        let again = self
            .evaluator
            .evaluate_many(std::slice::from_ref(&query), 1)
            .pop()
            .expect("one result")?;
        self.ledger.lock().unwrap().audit_evaluations += 1;
        if again.accuracy.to_bits() != picked.accuracy.to_bits() {
            return Err(Error::NonDeterministic {
                key: picked.query.ablated.to_string(),
                first: picked.accuracy,
                second: again.accuracy,
            });
        }
        Ok(())
    }
}

fn clone_result(r: &Result<MeasurementRecord>) -> Result<MeasurementRecord> {
    match r {
        Ok(rec) => Ok(rec.clone()),
        Err(Error::Transport { query_id, message }) => Err(Error::Transport {
            query_id: query_id.clone(),
            message: message.clone(),
        }),
        Err(Error::Evaluator { query_id, message }) => Err(Error::Evaluator {
            query_id: query_id.clone(),
            message: message.clone(),
        }),
        Err(other) => Err(Error::Protocol(other.to_string())),
    }
}
