//! Experiment specs and the JSON documents written by each command.
//!
//! Every document carries a `schema` tag and no timestamps, so a rerun with
//! the same spec and seed writes identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{BudgetLedger, Evaluator, EvaluatorInfo, Gateway};
use crate::identify::{CurvePoint, DegradationTable, IdentifyConfig, LocalizationResult, Strategy};
use crate::oracle::{make_calibrated_oracle, PlantedOracle, Scenario};
use crate::rng::RNG_NAME;
use crate::space::{format_head_list, HeadId, HeadSet};
use crate::subprocess::{SubprocessConfig, SubprocessEvaluator, DEFAULT_TIMEOUT};

pub const SPEC_SCHEMA: &str = "headhunt-spec/1";
pub const RESULT_SCHEMA: &str = "headhunt-result/1";
pub const COMPARE_SCHEMA: &str = "headhunt-compare/1";
pub const CURVE_SCHEMA: &str = "headhunt-curve/1";
pub const ORACLE_SCHEMA: &str = "headhunt-oracle/1";
pub const UNIVERSAL_SCHEMA: &str = "headhunt-universal/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorSpec {
    /// A calibrated synthetic scenario.
    Oracle {
        scenario: Scenario,
        #[serde(default)]
        noise_sigma: f64,
        /// Defaults to the identification seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_seed: Option<u64>,
    },
    /// A planted oracle stored as a document.
    OracleFile { path: PathBuf },
    Subprocess {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<f64>,
        #[serde(default = "one")]
        concurrency: usize,
    },
}

fn one() -> usize {
    1
}

impl EvaluatorSpec {
    /// Starts the evaluator. `timeout` overrides a subprocess's configured
    /// timeout; `seed` is the fallback oracle noise seed.
    pub fn build(&self, seed: u64, timeout: Option<Duration>) -> Result<Arc<dyn Evaluator>> {
        match self {
            EvaluatorSpec::Oracle {
                scenario,
                noise_sigma,
                noise_seed,
            } => {
                let oracle =
                    make_calibrated_oracle(*scenario).with_noise(*noise_sigma, noise_seed.unwrap_or(seed));
                oracle.check()?;
                Ok(Arc::new(oracle))
            }
            EvaluatorSpec::OracleFile { path } => {
                let oracle = read_oracle(path)?;
                Ok(Arc::new(oracle))
            }
            EvaluatorSpec::Subprocess {
                command,
                args,
                timeout_secs,
                concurrency,
            } => {
                let mut cfg = SubprocessConfig::new(command.clone(), args.clone());
                cfg.timeout = timeout
                    .or_else(|| timeout_secs.map(Duration::from_secs_f64))
                    .unwrap_or(DEFAULT_TIMEOUT);
                cfg.concurrency = (*concurrency).max(1);
                Ok(Arc::new(SubprocessEvaluator::spawn(cfg)?))
            }
        }
    }

    /// The head order that reproduces an oracle's calibration curve.
    pub fn calibration_order(&self) -> Result<Vec<HeadId>> {
        let order = match self {
            EvaluatorSpec::Oracle { scenario, .. } => make_calibrated_oracle(*scenario).calibration_order,
            EvaluatorSpec::OracleFile { path } => read_oracle(path)?.calibration_order,
            EvaluatorSpec::Subprocess { .. } => Vec::new(),
        };
        if order.is_empty() {
            return Err(Error::Config("evaluator has no calibration order".into()));
        }
        Ok(order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEvaluator {
    pub name: String,
    pub evaluator: EvaluatorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "spec_schema")]
    pub schema: String,
    pub evaluator: EvaluatorSpec,
    /// Extra tasks measured alongside ablation curves.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub general: Vec<NamedEvaluator>,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Treat solver non-convergence as an error.
    #[serde(default)]
    pub strict: bool,
}

fn spec_schema() -> String {
    SPEC_SCHEMA.into()
}

impl ExperimentSpec {
    pub fn new(evaluator: EvaluatorSpec, identify: IdentifyConfig) -> Self {
        Self {
            schema: spec_schema(),
            evaluator,
            general: Vec::new(),
            identify,
            output_dir: None,
            strict: false,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let spec: Self = read_json(path)?;
        check_schema(&spec.schema, SPEC_SCHEMA)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub with_baseline: usize,
    pub without_baseline: usize,
    pub cache_hits: usize,
    pub audit_evaluations: usize,
}

impl From<BudgetLedger> for BudgetSummary {
    fn from(l: BudgetLedger) -> Self {
        Self {
            with_baseline: l.evaluations_used,
            without_baseline: l.excluding_baseline(),
            cache_hits: l.cache_hits,
            audit_evaluations: l.audit_evaluations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema: String,
    pub tool_version: String,
    pub rng: String,
    pub evaluator: EvaluatorInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator_spec: Option<EvaluatorSpec>,
    pub budget: BudgetSummary,
    pub result: LocalizationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<CurvePoint>>,
}

impl ResultDocument {
    pub fn new(info: EvaluatorInfo, spec: Option<EvaluatorSpec>, result: LocalizationResult) -> Self {
        Self {
            schema: RESULT_SCHEMA.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            rng: RNG_NAME.into(),
            evaluator: info,
            evaluator_spec: spec,
            budget: result.ledger.into(),
            result,
            curve: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let doc: Self = read_json(path)?;
        check_schema(&doc.schema, RESULT_SCHEMA)?;
        Ok(doc)
    }

    /// Top-k table with impacts and the budget in both conventions.
    pub fn render(&self) -> String {
        let r = &self.result;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "task {}  strategy {}  model {}  baseline {:.4}",
            self.evaluator.task, r.config.strategy, self.evaluator.shape, r.baseline
        );
        let _ = writeln!(out, "{:>4}  {:<8}  {:>10}", "rank", "head", "impact");
        for (i, h) in r.selected.iter().enumerate() {
            let impact = r
                .ranked
                .iter()
                .find(|x| x.head == *h)
                .map(|x| x.impact)
                .unwrap_or(f64::NAN);
            let _ = writeln!(out, "{:>4}  {:<8}  {:>10.5}", i + 1, h.to_string(), impact);
        }
        let _ = writeln!(
            out,
            "evaluations {} ({} without baseline), cache hits {}",
            self.budget.with_baseline, self.budget.without_baseline, self.budget.cache_hits
        );
        for w in &r.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: Strategy,
    pub selected: Vec<HeadId>,
    /// Score change with the selected heads ablated, negative meaning
    /// degradation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_task: Option<f64>,
    pub budget: Option<BudgetSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareDocument {
    pub schema: String,
    pub task: String,
    pub baseline: f64,
    pub k: usize,
    pub rows: Vec<CompareRow>,
}

impl CompareDocument {
    /// One row per strategy: Δtask and budget with and without the baseline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task {}  k {}  baseline {:.4}", self.task, self.k, self.baseline);
        let _ = writeln!(
            out,
            "{:<10}  {:>9}  {:>8}  {:>8}  heads",
            "method", "dtask", "budget", "budget+1"
        );
        for row in &self.rows {
            match (&row.error, row.budget) {
                (Some(e), _) => {
                    let _ = writeln!(out, "{:<10}  failed: {e}", row.strategy.label());
                }
                (None, Some(b)) => {
                    let _ = writeln!(
                        out,
                        "{:<10}  {:>9.2}  {:>8}  {:>8}  {}",
                        row.strategy.label(),
                        row.delta_task.unwrap_or(f64::NAN) * 100.0,
                        b.without_baseline,
                        b.with_baseline,
                        format_head_list(&row.selected)
                    );
                }
                (None, None) => {}
            }
        }
        out
    }
}

/// Runs each strategy in its own gateway session against one evaluator and
/// measures the score with each selection ablated. The Δ check is issued
/// after the strategy's ledger is read, so it does not count against it.
pub fn compare(
    base: &IdentifyConfig,
    strategies: &[Strategy],
    gateway: &Gateway,
) -> Result<CompareDocument> {
    if strategies.len() < 2 {
        return Err(Error::Config("compare needs at least two strategies".into()));
    }
    let baseline = gateway.baseline()?;
    let mut rows = Vec::new();
    for &strategy in strategies {
        let cfg = IdentifyConfig {
            strategy,
            ..base.clone()
        };
        let session = gateway.session();
        let row = crate::identify::identify(&cfg, &session).and_then(|res| {
            let budget = BudgetSummary::from(session.ledger());
            let set = HeadSet::from_heads(session.shape(), res.selected.iter().copied())?;
            let acc = session.evaluate(&set)?.accuracy;
            Ok(CompareRow {
                strategy,
                delta_task: Some(acc - res.baseline),
                budget: Some(budget),
                warnings: res.warnings,
                selected: res.selected,
                error: None,
            })
        });
        rows.push(match row {
            Ok(r) => r,
            Err(e) if e.is_transport() => return Err(e),
            Err(e) => CompareRow {
                strategy,
                selected: Vec::new(),
                delta_task: None,
                budget: None,
                warnings: Vec::new(),
                error: Some(e.to_string()),
            },
        });
    }
    Ok(CompareDocument {
        schema: COMPARE_SCHEMA.into(),
        task: gateway.info().task.clone(),
        baseline,
        k: base.k,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveOrder {
    /// The result's ranked heads.
    Ranked,
    /// The oracle's calibration order.
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub head: Option<HeadId>,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub general: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDocument {
    pub schema: String,
    pub task: String,
    pub order: CurveOrder,
    pub heads: Vec<HeadId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub general_tasks: Vec<String>,
    pub rows: Vec<CurveRow>,
}

impl CurveDocument {
    pub fn from_points(
        task: String,
        order: CurveOrder,
        heads: Vec<HeadId>,
        main: &[CurvePoint],
        general: &[(String, Vec<CurvePoint>)],
    ) -> Self {
        let rows = main
            .iter()
            .map(|p| CurveRow {
                k: p.k,
                head: p.k.checked_sub(1).map(|i| heads[i]),
                accuracy: p.accuracy,
                general: general.iter().map(|(_, g)| g[p.k].accuracy).collect(),
            })
            .collect();
        Self {
            schema: CURVE_SCHEMA.into(),
            task,
            order,
            heads,
            general_tasks: general.iter().map(|(n, _)| n.clone()).collect(),
            rows,
        }
    }

    /// Plot-ready tab-separated rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("k\thead\t");
        out.push_str(&self.task);
        for g in &self.general_tasks {
            out.push('\t');
            out.push_str(g);
        }
        out.push('\n');
        for r in &self.rows {
            let head = r.head.map(|h| h.to_string()).unwrap_or_else(|| "-".into());
            let _ = write!(out, "{}\t{}\t{}", r.k, head, r.accuracy);
            for g in &r.general {
                let _ = write!(out, "\t{g}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalDocument {
    pub schema: String,
    pub min_tasks: usize,
    pub tasks: Vec<String>,
    pub universal: Vec<HeadId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<DegradationTable>,
}

impl UniversalDocument {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "universal heads (top-k in >= {} of {} tasks): {}",
            self.min_tasks,
            self.tasks.len(),
            if self.universal.is_empty() { "none".to_string() } else { format_head_list(&self.universal) }
        );
        if let Some(t) = &self.degradation {
            let _ = writeln!(out, "{:<8}  {}", "head", t.tasks.join("  "));
            for row in &t.rows {
                let cells: Vec<String> = row.deltas.iter().map(|d| format!("{:+.2}", d * 100.0)).collect();
                let _ = writeln!(out, "{:<8}  {}", row.head.to_string(), cells.join("  "));
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct OracleDocument {
    schema: String,
    #[serde(flatten)]
    oracle: PlantedOracle,
}

pub fn read_oracle(path: &Path) -> Result<PlantedOracle> {
    let doc: OracleDocument = read_json(path)?;
    check_schema(&doc.schema, ORACLE_SCHEMA)?;
    doc.oracle.check()?;
    Ok(doc.oracle)
}

pub fn write_oracle(path: &Path, oracle: &PlantedOracle) -> Result<()> {
    write_json(
        path,
        &OracleDocument {
            schema: ORACLE_SCHEMA.into(),
            oracle: oracle.clone(),
        },
    )
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents always serialise");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_json(value))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Input(format!("expected schema {expected}, found {found:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_fill_in() {
        let spec: ExperimentSpec = serde_json::from_str(
            r#"{"evaluator":{"kind":"oracle","scenario":"gsm8k_like"},"identify":{"strategy":"greedy","k":3}}"#,
        )
        .unwrap();
        assert_eq!(spec.schema, SPEC_SCHEMA);
        assert_eq!(spec.identify.k, 3);
        assert_eq!(spec.identify.n_measurements, 100);
        assert!(!spec.strict);
    }

    #[test]
    fn subprocess_spec_defaults_to_one_request_in_flight() {
        let e: EvaluatorSpec = serde_json::from_str(r#"{"kind":"subprocess","command":"python3"}"#).unwrap();
        assert_eq!(
            e,
            EvaluatorSpec::Subprocess {
                command: "python3".into(),
                args: vec![],
                timeout_secs: None,
                concurrency: 1
            }
        );
    }

    #[test]
    fn oracle_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("headhunt-doc-{}", std::process::id()));
        let path = dir.join("oracle.json");
        let oracle = make_calibrated_oracle(Scenario::MbppLike).with_noise(0.02, 9);
        write_oracle(&path, &oracle).unwrap();
        assert_eq!(read_oracle(&path).unwrap(), oracle);
        let spec = EvaluatorSpec::OracleFile { path: path.clone() };
        assert_eq!(spec.build(0, None).unwrap().info().task, "mbpp_like");
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn wrong_schema_is_rejected() {
        assert!(check_schema("headhunt-result/2", RESULT_SCHEMA).is_err());
    }
}
