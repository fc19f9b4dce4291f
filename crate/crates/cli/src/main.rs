use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reflectool::agent::{AgentConfig, Deps};
use reflectool::backend::{BackendError, BackendFactory, ScriptBook, ScriptFactory, SharedBackend};
use reflectool::backend::{HttpBackend, HttpConfig};
use reflectool::experience::ExperienceLedger;
use reflectool::harness::{
    self, emit_report, evaluate, load_suite, read_records, sweep_optimization_steps,
    sweep_verification_size, EvalOptions, ReportFormat, ReportRow, SuiteMetrics,
};
use reflectool::memory::MemoryStore;
use reflectool::optimizer::{optimize_suite, CheckpointPlan, OptimizerConfig};
use reflectool::toolbox::ner::Gazetteer;
use reflectool::toolbox::retrieval::Corpus;
use reflectool::toolbox::{default_registry, ToolEnv};
use reflectool::verifier::{VerifierConfig, VerifierMode};
use reflectool::TaskInstance;

#[derive(Parser)]
#[command(name = "reflectool", version, about = "Reflection-driven tool-use agent")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `scripted:<file>` or `http:<base_url>`.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Forwarded to networked backends as the sampling seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Passage collection for corpus_retriever (JSONL of {doc_id, text}).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Entity term list for entity_tagger, one term per line.
    #[arg(long, global = true)]
    gazetteer: Option<PathBuf>,
    /// Step error rate over tool steps only.
    #[arg(long, global = true)]
    tool_steps_only: bool,
    #[arg(long, global = true, default_value_t = 10)]
    max_steps: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Build memory and tool-wise experience from a training suite.
    Optimize {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        checkpoint_every: usize,
        #[arg(long)]
        always_reflect: bool,
    },
    /// Run a suite with memory demonstrations and a verifier.
    Infer {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = VerifierArg::None)]
        verifier: VerifierArg,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        demo_k: usize,
        /// Directory for trajectories.jsonl, records.jsonl, and metrics.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a test suite at every optimization checkpoint.
    SweepOpt {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = VerifierArg::None)]
        verifier: VerifierArg,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Evaluate both verifiers across verification sizes.
    SweepN {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        n_values: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Recompute metrics from per-task records.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "report")]
        label: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifierArg {
    None,
    Refine,
    Select,
}

impl VerifierArg {
    fn config(self, n: usize) -> VerifierConfig {
        match self {
            VerifierArg::None => VerifierConfig::none(),
            VerifierArg::Refine => VerifierConfig::refine(n),
            VerifierArg::Select => VerifierConfig::select(n),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

enum Failure {
    Format(String),
    Backend(String),
    Other(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Format(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Format(m) | Failure::Backend(m) | Failure::Other(m) => m,
        }
    }
}

impl From<harness::FormatError> for Failure {
    fn from(e: harness::FormatError) -> Self {
        Failure::Format(e.to_string())
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Failure::Backend(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn backend_factory(common: &Common) -> Result<Box<dyn BackendFactory>> {
    let target = common
        .backend
        .as_deref()
        .ok_or_else(|| Failure::Backend("--backend is required (scripted:<file> or http:<url>)".into()))?;
    if let Some(path) = target.strip_prefix("scripted:") {
        let book = ScriptBook::load(Path::new(path))?;
        return Ok(Box::new(ScriptFactory::new(book)?));
    }
    if let Some(url) = target.strip_prefix("http:") {
        let mut config = HttpConfig::new(url);
        config.seed = Some(common.seed);
        return Ok(Box::new(SharedBackend(Arc::new(HttpBackend::new(config)))));
    }
    Err(Failure::Backend(format!("unknown backend {target:?}")))
}

fn suite_dir(suite: &Path) -> PathBuf {
    suite.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn deps(common: &Common, suite: &Path) -> Result<Deps> {
    let mut env = ToolEnv::new(suite_dir(suite));
    if let Some(path) = &common.corpus {
        env = env.with_corpus(Corpus::load_jsonl(path).map_err(|e| Failure::Format(format!("{}: {e}", path.display())))?);
    }
    if let Some(path) = &common.gazetteer {
        env = env.with_gazetteer(Gazetteer::load(path)?);
    }
    Ok(Deps {
        registry: default_registry(),
        env,
        backends: backend_factory(common)?,
    })
}

fn load_snapshots(memory: Option<&Path>, ledger: Option<&Path>, deps: &Deps) -> Result<(MemoryStore, ExperienceLedger)> {
    let memory = match memory {
        Some(p) => MemoryStore::load(p).map_err(|e| Failure::Format(format!("{}: {e}", p.display())))?,
        None => MemoryStore::new(),
    };
    let ledger = match ledger {
        Some(p) => ExperienceLedger::load(p, &deps.registry).map_err(|e| Failure::Format(format!("{}: {e}", p.display())))?,
        None => ExperienceLedger::new(&deps.registry),
    };
    Ok((memory, ledger))
}

fn print_metrics(label: &str, m: &SuiteMetrics) {
    println!(
        "{label}: accuracy {:.2}% ({}/{}), step error {:.2}%, task error {:.2}%, mean steps {:.2}",
        m.accuracy,
        m.successes(),
        m.tasks,
        m.step_error_rate,
        m.task_error_rate,
        m.mean_steps
    );
}

fn print_rows(rows: &[ReportRow]) {
    for r in rows {
        print_metrics(&r.label, &r.metrics);
    }
}

fn load(suite: &Path) -> Result<Vec<TaskInstance>> {
    Ok(load_suite(suite)?)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let opts = EvalOptions {
        workers: common.workers,
        tool_steps_only: common.tool_steps_only,
    };
    let agent_cfg = |verifier: VerifierConfig, demo_k: usize| AgentConfig {
        max_steps: common.max_steps,
        demo_k,
        verifier,
        ..AgentConfig::default()
    };
    match &cli.command {
        Command::Optimize {
            suite,
            out,
            checkpoint_every,
            always_reflect,
        } => {
            let tasks = load(suite)?;
            let deps = deps(common, suite)?;
            let mut memory = MemoryStore::new();
            let mut ledger = ExperienceLedger::new(&deps.registry);
            let cfg = OptimizerConfig {
                max_steps: common.max_steps,
                always_reflect: *always_reflect,
            };
            let plan = CheckpointPlan {
                dir: out.clone(),
                every: (*checkpoint_every).max(1),
            };
            let reports = optimize_suite(&tasks, &mut memory, &mut ledger, &cfg, &deps, Some(&plan))?;
            fs::write(out.join("reports.jsonl"), harness::to_jsonl(&reports))?;
            let added = reports.iter().filter(|r| r.memory_added).count();
            let merged: usize = reports.iter().map(|r| r.suggestions_merged).sum();
            println!(
                "optimized {} tasks: {added} stored in memory, {merged} suggestions merged",
                reports.len()
            );
            if reports.iter().any(|r| r.error.as_deref().is_some_and(|e| e.starts_with("backend unavailable"))) {
                return Err(Failure::Backend("backend unavailable for some tasks; see reports.jsonl".into()));
            }
        }
        Command::Infer {
            suite,
            memory,
            ledger,
            verifier,
            n,
            demo_k,
            out,
        } => {
            let tasks = load(suite)?;
            let deps = deps(common, suite)?;
            let (memory, ledger) = load_snapshots(memory.as_deref(), ledger.as_deref(), &deps)?;
            let eval = evaluate(&tasks, &memory, &ledger, &agent_cfg(verifier.config(*n), *demo_k), &deps, &opts)?;
            fs::create_dir_all(out)?;
            fs::write(out.join("trajectories.jsonl"), harness::to_jsonl(&eval.trajectories))?;
            fs::write(out.join("records.jsonl"), harness::to_jsonl(&eval.records))?;
            emit_report(&[ReportRow::from_evaluation("infer", &eval)], ReportFormat::Json, &out.join("metrics.json"))?;
            print_metrics("infer", &eval.metrics);
        }
        Command::SweepOpt {
            suite,
            run_dir,
            verifier,
            n,
            out,
            format,
        } => {
            let tasks = load(suite)?;
            let deps = deps(common, suite)?;
            let cfg = agent_cfg(verifier.config(*n), AgentConfig::default().demo_k);
            let rows = sweep_optimization_steps(&tasks, run_dir, &cfg, &deps, &opts).map_err(|e| match e {
                harness::SweepError::Backend(b) => Failure::from(b),
                other => Failure::Format(other.to_string()),
            })?;
            emit_report(&rows, (*format).into(), out)?;
            print_rows(&rows);
        }
        Command::SweepN {
            suite,
            memory,
            ledger,
            n_values,
            out,
            format,
        } => {
            if n_values.is_empty() || n_values.contains(&0) {
                return Err(Failure::Other("--n-values must be positive integers".into()));
            }
            let tasks = load(suite)?;
            let deps = deps(common, suite)?;
            let (memory, ledger) = load_snapshots(memory.as_deref(), ledger.as_deref(), &deps)?;
            let cfg = agent_cfg(VerifierConfig { mode: VerifierMode::None, n: 1 }, AgentConfig::default().demo_k);
            let rows = sweep_verification_size(&tasks, &memory, &ledger, n_values, &cfg, &deps, &opts)?;
            emit_report(&rows, (*format).into(), out)?;
            print_rows(&rows);
        }
        Command::Report {
            records,
            label,
            out,
            format,
        } => {
            let records = read_records(records)?;
            let metrics = SuiteMetrics::from_records(&records, common.tool_steps_only);
            let row = ReportRow {
                label: label.clone(),
                metrics,
                policy_calls: records.iter().map(|r| r.policy_calls).sum(),
                verifier_calls: records.iter().map(|r| r.verifier_calls).sum(),
                steps: records.iter().map(|r| r.steps).sum(),
            };
            emit_report(std::slice::from_ref(&row), (*format).into(), out)?;
            print_metrics(label, &metrics);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
