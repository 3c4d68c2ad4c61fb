use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use headhunt::design::{audit, construct_bernoulli, construct_stratified, MeasurementMatrix};
use headhunt::document::{
    self, read_json, write_json, CurveDocument, CurveOrder, EvaluatorSpec, ExperimentSpec,
    ResultDocument, UniversalDocument, UNIVERSAL_SCHEMA,
};
use headhunt::identify::{ablation_curve, cross_task_degradation, find_universal_heads, Strategy};
use headhunt::lasso::Lambda;
use headhunt::oracle::{make_calibrated_oracle, PlantedOracle, Scenario};
use headhunt::protocol::{self, Message};
use headhunt::study::{recovery_study as run_study, RecoveryGrid};
use headhunt::{Error, Gateway, HeadId, IdentifyConfig, ModelShape};

use crate::{AuditCmd, CompareCmd, CurveCmd, EvaluatorArgs, IdentifyArgs, IdentifyCmd, ServeCmd, StudyCmd, UniversalCmd};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_transport() { EXIT_TRANSPORT } else { EXIT_CONFIG },
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn timeout(secs: Option<f64>) -> Result<Option<Duration>, Failure> {
    match secs {
        None => Ok(None),
        Some(s) if s > 0.0 && s.is_finite() => Ok(Some(Duration::from_secs_f64(s))),
        Some(s) => Err(config_error(format!("timeout must be a positive number of seconds, got {s}"))),
    }
}

fn parse_filter(text: &str) -> Result<Vec<HeadId>, Failure> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<HeadId>().map_err(Failure::from))
        .collect()
}

/// The experiment file, if any, with flags applied over it.
fn build_spec(ev: &EvaluatorArgs, id: &IdentifyArgs) -> Result<ExperimentSpec, Failure> {
    let flag_evaluator = if let Some(name) = &ev.scenario {
        Some(EvaluatorSpec::Oracle {
            scenario: name.parse::<Scenario>()?,
            noise_sigma: 0.0,
            noise_seed: None,
        })
    } else if let Some(path) = &ev.oracle {
        Some(EvaluatorSpec::OracleFile { path: path.clone() })
    } else {
        ev.evaluator_cmd.as_ref().map(|cmd| EvaluatorSpec::Subprocess {
            command: cmd.clone(),
            args: ev.evaluator_args.clone(),
            timeout_secs: None,
            concurrency: 1,
        })
    };
    let mut spec = match (&ev.spec, flag_evaluator) {
        (Some(path), flag) => {
            let mut spec = ExperimentSpec::read(path)?;
            if let Some(e) = flag {
                spec.evaluator = e;
            }
            spec
        }
        (None, Some(e)) => ExperimentSpec::new(e, IdentifyConfig::default()),
        (None, None) => {
            return Err(config_error(
                "no evaluator: pass --spec, --scenario, --oracle or --evaluator-cmd",
            ))
        }
    };

    match (&mut spec.evaluator, ev.noise) {
        (_, None) => {}
        (EvaluatorSpec::Oracle { noise_sigma, .. }, Some(n)) => *noise_sigma = n,
        (_, Some(_)) => return Err(config_error("--noise applies only to scenario oracles")),
    }
    if let (EvaluatorSpec::Subprocess { concurrency, .. }, Some(c)) = (&mut spec.evaluator, ev.concurrency) {
        *concurrency = c.max(1);
    }

    let cfg = &mut spec.identify;
    if let Some(s) = &id.strategy {
        cfg.strategy = s.parse()?;
    }
    if let Some(k) = id.k {
        cfg.k = k;
    }
    if let Some(m) = id.measurements {
        cfg.n_measurements = m;
    }
    if let Some(d) = id.density {
        cfg.density = d;
    }
    if let Some(s) = id.seed {
        cfg.seed = s;
    }
    if let Some(l) = &id.lambda {
        cfg.solver.lambda = l.parse::<Lambda>()?;
    }
    if let Some(f) = &id.filter {
        cfg.universal_filter = parse_filter(f)?;
    }
    if id.no_audit {
        cfg.audit_determinism = false;
    }
    spec.strict |= id.strict;
    Ok(spec)
}

fn open_gateway(spec: &EvaluatorSpec, seed: u64, secs: Option<f64>) -> Result<Gateway, Failure> {
    Ok(Gateway::new(spec.build(seed, timeout(secs)?)?))
}

fn default_out(spec: &ExperimentSpec, name: &str) -> PathBuf {
    spec.output_dir
        .as_deref()
        .unwrap_or_else(|| Path::new("."))
        .join(name)
}

pub fn identify(cmd: IdentifyCmd) -> Outcome {
    let spec = build_spec(&cmd.evaluator, &cmd.identify)?;
    let gateway = open_gateway(&spec.evaluator, spec.identify.seed, cmd.evaluator.timeout)?;
    let result = headhunt::identify(&spec.identify, &gateway)?;
    let converged = result.estimate.as_ref().is_none_or(|e| e.converged);

    if let (Some(path), Some(matrix)) = (&cmd.matrix_out, &result.matrix) {
        matrix.write_jsonl(BufWriter::new(File::create(path)?))?;
    }
    let mut doc = ResultDocument::new(gateway.info().clone(), Some(spec.evaluator.clone()), result);
    if let Some(k_max) = cmd.curve {
        let order: Vec<HeadId> = doc.result.ranked.iter().map(|r| r.head).collect();
        doc.curve = Some(ablation_curve(&order, k_max, &gateway)?);
    }
    let out = cmd.out.unwrap_or_else(|| default_out(&spec, "result.json"));
    write_json(&out, &doc)?;
    print!("{}", doc.render());
    println!("wrote {}", out.display());

    if spec.strict && !converged {
        return Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: "solver did not converge (strict mode)".into(),
        });
    }
    Ok(())
}

pub fn compare(cmd: CompareCmd) -> Outcome {
    let spec = build_spec(&cmd.evaluator, &cmd.identify)?;
    let strategies: Vec<Strategy> = match &cmd.strategies {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Strategy>())
            .collect::<Result<_, _>>()?,
        None => Strategy::ALL.to_vec(),
    };
    if strategies.len() < 2 {
        return Err(config_error("compare needs at least two strategies"));
    }
    let gateway = open_gateway(&spec.evaluator, spec.identify.seed, cmd.evaluator.timeout)?;
    let doc = document::compare(&spec.identify, &strategies, &gateway)?;
    print!("{}", doc.render());
    let out = cmd.out.or_else(|| spec.output_dir.as_ref().map(|d| d.join("compare.json")));
    if let Some(out) = out {
        write_json(&out, &doc)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn curve(cmd: CurveCmd) -> Outcome {
    let doc = ResultDocument::read(&cmd.result)?;
    let spec = cmd.spec.as_deref().map(ExperimentSpec::read).transpose()?;
    let evaluator = match (&spec, &doc.evaluator_spec) {
        (Some(s), _) => s.evaluator.clone(),
        (None, Some(e)) => e.clone(),
        (None, None) => return Err(config_error("result records no evaluator; pass --spec")),
    };
    let seed = doc.result.config.seed;
    let order = match cmd.order.as_str() {
        "ranked" => CurveOrder::Ranked,
        "calibration" => CurveOrder::Calibration,
        other => return Err(config_error(format!("unknown curve order {other:?}"))),
    };
    let heads: Vec<HeadId> = match order {
        CurveOrder::Ranked => doc.result.ranked.iter().map(|r| r.head).collect(),
        CurveOrder::Calibration => evaluator.calibration_order()?,
    };
    let gateway = open_gateway(&evaluator, seed, cmd.timeout)?;
    let main = ablation_curve(&heads, cmd.k_max, &gateway)?;
    let mut general = Vec::new();
    for g in spec.iter().flat_map(|s| &s.general) {
        let gw = open_gateway(&g.evaluator, seed, cmd.timeout)?;
        general.push((g.name.clone(), ablation_curve(&heads, cmd.k_max, &gw)?));
    }
    let curve = CurveDocument::from_points(
        gateway.info().task.clone(),
        order,
        heads[..cmd.k_max].to_vec(),
        &main,
        &general,
    );
    let tsv = curve.to_tsv();
    print!("{tsv}");
    if let Some(path) = &cmd.tsv {
        std::fs::write(path, &tsv)?;
    }
    if let Some(path) = &cmd.out {
        write_json(path, &curve)?;
    }
    Ok(())
}

pub fn recovery_study(cmd: StudyCmd) -> Outcome {
    let mut grid: RecoveryGrid = match &cmd.grid {
        Some(path) => read_json(path)?,
        None => RecoveryGrid::default(),
    };
    if let Some(s) = cmd.seeds {
        grid.seeds = s;
    }
    if let Some(s) = cmd.seed {
        grid.base_seed = s;
    }
    let report = run_study(&grid)?;
    print!("{}", report.render());
    if let Some(out) = &cmd.out {
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn audit_matrix(cmd: AuditCmd) -> Outcome {
    let matrix: MeasurementMatrix = if let Some(path) = &cmd.matrix {
        MeasurementMatrix::read_jsonl(BufReader::new(File::open(path).map_err(|e| {
            config_error(format!("cannot read {}: {e}", path.display()))
        })?))?
    } else if let Some(path) = &cmd.result {
        ResultDocument::read(path)?
            .result
            .matrix
            .ok_or_else(|| config_error(format!("{} holds no measurement matrix", path.display())))?
    } else if let (Some(l), Some(h)) = (cmd.layers, cmd.heads) {
        let shape = ModelShape::new(l, h)?;
        match cmd.strategy.parse::<Strategy>()? {
            Strategy::CsBernoulli => construct_bernoulli(shape, cmd.measurements, cmd.density, cmd.seed)?,
            Strategy::CsStratified => construct_stratified(shape, cmd.measurements, cmd.density, cmd.seed)?,
            other => return Err(config_error(format!("{other} has no measurement matrix"))),
        }
    } else {
        return Err(config_error("pass --matrix, --result, or --layers with --heads"));
    };
    if let Some(path) = &cmd.write {
        matrix.write_jsonl(BufWriter::new(File::create(path)?))?;
    }
    let report = audit(&matrix);
    println!(
        "{} x {}  density {:.5}  columns {}..{} (variance {:.4})  uncovered {}  empty rows {}  duplicates {}",
        report.n_measurements,
        report.n_heads,
        report.density,
        report.min_column,
        report.max_column,
        report.column_variance,
        report.uncovered_columns,
        report.empty_rows,
        report.duplicate_rows
    );
    for w in matrix.warnings() {
        println!("warning: {w}");
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    if let Some(out) = &cmd.out {
        write_json(out, &report)?;
    }
    if !report.is_clean() {
        return Err(config_error(format!("{} invariant violation(s)", report.violations.len())));
    }
    Ok(())
}

pub fn filter_universal(cmd: UniversalCmd) -> Outcome {
    let docs = cmd
        .results
        .iter()
        .map(|p| ResultDocument::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = docs.iter().map(|d| d.result.clone()).collect();
    let universal = find_universal_heads(&results, cmd.min_tasks)?;

    let degradation = if cmd.degradation {
        let mut gateways = Vec::new();
        for (doc, path) in docs.iter().zip(&cmd.results) {
            let spec = doc
                .evaluator_spec
                .as_ref()
                .ok_or_else(|| config_error(format!("{} records no evaluator", path.display())))?;
            gateways.push((doc.evaluator.task.clone(), open_gateway(spec, doc.result.config.seed, cmd.timeout)?));
        }
        let tasks: Vec<(String, &Gateway)> = gateways.iter().map(|(n, g)| (n.clone(), g)).collect();
        Some(cross_task_degradation(&universal, &tasks)?)
    } else {
        None
    };

    if let Some(dir) = &cmd.apply {
        std::fs::create_dir_all(dir)?;
        for (mut doc, path) in docs.iter().cloned().zip(&cmd.results) {
            doc.result.refilter(&universal);
            let name = path.file_name().ok_or_else(|| config_error("result path has no file name"))?;
            write_json(&dir.join(name), &doc)?;
        }
    }

    let out = UniversalDocument {
        schema: UNIVERSAL_SCHEMA.into(),
        min_tasks: cmd.min_tasks,
        tasks: docs.iter().map(|d| d.evaluator.task.clone()).collect(),
        universal,
        degradation,
    };
    print!("{}", out.render());
    if let Some(path) = &cmd.out {
        write_json(path, &out)?;
    }
    Ok(())
}

pub fn serve_oracle(cmd: ServeCmd) -> Outcome {
    let oracle: PlantedOracle = match (&cmd.scenario, &cmd.oracle) {
        (Some(name), _) => make_calibrated_oracle(name.parse()?),
        (None, Some(path)) => document::read_oracle(path)?,
        (None, None) => return Err(config_error("pass --scenario or --oracle")),
    }
    .with_noise(cmd.noise, cmd.seed);
    oracle.check()?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    if !cmd.stall {
        protocol::serve(&oracle, stdin.lock(), stdout.lock())?;
        return Ok(());
    }
    let info = headhunt::Evaluator::info(&oracle);
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        if let Ok(Message::Hello { .. }) = Message::parse(&line?) {
            let ready = Message::Ready {
                n_layers: info.shape.n_layers(),
                heads_per_layer: info.shape.heads_per_layer(),
                task: info.task.clone(),
                metadata: info.metadata.clone(),
            };
            writeln!(out, "{}", ready.to_line())?;
            out.flush()?;
        }
    }
    Ok(())
}

