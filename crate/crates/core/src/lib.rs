//! Localizing task-specific attention heads with few ablation queries.
//!
//! A run picks a measurement design, asks an evaluator for the task score
//! under each row's ablation pattern, fits a sparse linear model of per-head
//! impacts, and keeps the `k` most damaging heads. Greedy baselines and a
//! synthetic oracle with planted impacts sit alongside for comparison and
//! testing.

pub mod design;
pub mod document;
pub mod error;
pub mod gateway;
pub mod identify;
pub mod lasso;
pub mod oracle;
pub mod protocol;
pub mod rng;
pub mod space;
pub mod study;
pub mod subprocess;

pub use design::{audit, construct_bernoulli, construct_stratified, MatrixAudit, MeasurementMatrix};
pub use error::{Error, Result};
pub use gateway::{AblationQuery, BudgetLedger, Evaluation, Evaluator, EvaluatorInfo, Gateway};
pub use identify::{identify, IdentifyConfig, LocalizationResult, Strategy};
pub use lasso::{fit, ImpactEstimate, Lambda, SolverConfig};
pub use oracle::{make_calibrated_oracle, PlantedOracle, Scenario};
pub use space::{HeadId, HeadSet, ModelShape};
pub use document::{EvaluatorSpec, ExperimentSpec, ResultDocument};
pub use study::{recovery_study, RecoveryGrid, StudyReport};
