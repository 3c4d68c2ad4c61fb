use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod commands;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "headhunt", version, about = "Find task-specific attention heads with few ablation queries")]
struct Cli {
    /// Log at debug level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one identification strategy and write a result document.
    Identify(IdentifyCmd),
    /// Run several strategies on one evaluator and tabulate Δtask and budget.
    Compare(CompareCmd),
    /// Accuracy as the top heads of a result are ablated cumulatively.
    Curve(CurveCmd),
    /// Monte-Carlo recovery rates on random planted oracles.
    RecoveryStudy(StudyCmd),
    /// Check a measurement matrix's row and column balance.
    AuditMatrix(AuditCmd),
    /// Heads that rank in the top-k of several tasks.
    FilterUniversal(UniversalCmd),
    /// Serve a planted oracle over the line protocol on stdin/stdout.
    ServeOracle(ServeCmd),
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvaluatorArgs {
    /// Experiment spec (JSON); flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Calibrated oracle scenario, e.g. gsm8k_like.
    #[arg(long, conflicts_with_all = ["oracle", "evaluator_cmd"])]
    pub scenario: Option<String>,
    /// Planted oracle document.
    #[arg(long, conflicts_with = "evaluator_cmd")]
    pub oracle: Option<PathBuf>,
    /// Oracle noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Evaluator program speaking the line protocol.
    #[arg(long)]
    pub evaluator_cmd: Option<String>,
    /// Argument passed to the evaluator program (repeatable).
    #[arg(long = "evaluator-arg", allow_hyphen_values = true)]
    pub evaluator_args: Vec<String>,
    /// Requests kept in flight for a subprocess evaluator.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Seconds to wait for any single evaluator response.
    #[arg(long, env = "HEADHUNT_EVAL_TIMEOUT")]
    pub timeout: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Rows of the measurement matrix.
    #[arg(long)]
    pub measurements: Option<usize>,
    /// Fraction of heads ablated per row.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long, env = "HEADHUNT_SEED")]
    pub seed: Option<u64>,
    /// Lasso penalty, or "auto".
    #[arg(long)]
    pub lambda: Option<String>,
    /// Heads never selected, e.g. "L0H1,L1H29".
    #[arg(long)]
    pub filter: Option<String>,
    /// Skip the end-of-run determinism check.
    #[arg(long)]
    pub no_audit: bool,
    /// Exit with status 4 when the solver does not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct IdentifyCmd {
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
    #[command(flatten)]
    pub identify: IdentifyArgs,
    /// Result document path (default: <output_dir>/result.json).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Also write the measurement matrix as JSON lines.
    #[arg(long)]
    pub matrix_out: Option<PathBuf>,
    /// Attach an ablation curve of this length to the result.
    #[arg(long)]
    pub curve: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompareCmd {
    #[command(flatten)]
    pub evaluator: EvaluatorArgs,
    #[command(flatten)]
    pub identify: IdentifyArgs,
    /// Comma-separated strategies (default: all four).
    #[arg(long)]
    pub strategies: Option<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurveCmd {
    /// Result document whose ranking is ablated.
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k_max: usize,
    /// ranked or calibration.
    #[arg(long, default_value = "ranked")]
    pub order: String,
    /// Spec supplying the evaluator and general-task evaluators; defaults to
    /// the evaluator recorded in the result.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, env = "HEADHUNT_EVAL_TIMEOUT")]
    pub timeout: Option<f64>,
    /// Curve document path.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Tab-separated copy of the curve.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StudyCmd {
    /// Grid document (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Trials per cell.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, env = "HEADHUNT_SEED")]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditCmd {
    /// Matrix as JSON lines.
    #[arg(long, conflicts_with = "result")]
    pub matrix: Option<PathBuf>,
    /// Result document holding a matrix.
    #[arg(long)]
    pub result: Option<PathBuf>,
    /// Build a fresh matrix: layers of the model.
    #[arg(long, requires = "heads")]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, default_value = "cs_stratified")]
    pub strategy: String,
    #[arg(long, default_value_t = 100)]
    pub measurements: usize,
    #[arg(long, default_value_t = 0.01)]
    pub density: f64,
    #[arg(long, env = "HEADHUNT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Write the built matrix as JSON lines.
    #[arg(long)]
    pub write: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct UniversalCmd {
    /// Result documents, one per task.
    #[arg(required = true, num_args = 2..)]
    pub results: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub min_tasks: usize,
    /// Measure each candidate alone on every task's recorded evaluator.
    #[arg(long)]
    pub degradation: bool,
    /// Rewrite each result's selection with the universal heads filtered out,
    /// into this directory.
    #[arg(long)]
    pub apply: Option<PathBuf>,
    #[arg(long, env = "HEADHUNT_EVAL_TIMEOUT")]
    pub timeout: Option<f64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeCmd {
    #[arg(long, conflicts_with = "oracle")]
    pub scenario: Option<String>,
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, env = "HEADHUNT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Complete the handshake, then never answer (fault injection).
    #[arg(long)]
    pub stall: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = if cli.verbose { "debug" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();

    let outcome = match cli.command {
        Command::Identify(c) => commands::identify(c),
        Command::Compare(c) => commands::compare(c),
        Command::Curve(c) => commands::curve(c),
        Command::RecoveryStudy(c) => commands::recovery_study(c),
        Command::AuditMatrix(c) => commands::audit_matrix(c),
        Command::FilterUniversal(c) => commands::filter_universal(c),
        Command::ServeOracle(c) => commands::serve_oracle(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
