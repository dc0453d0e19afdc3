//! `wfshap`: attribute workflow performance to components.
//!
//! Exit status is 0 on success, 1 on environment or transport failure and 2 on
//! invalid input. Findings go to stderr; the report goes to stdout.

mod failure;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};

use wfshap_core::analysis::{
    correlate_with_judge, discover_optimal_configuration, table_consistency, JudgeScoreSeries,
    ModelAttributionTable,
};
use wfshap_core::evaluation::records::{build_game_from_records, record_line};
use wfshap_core::evaluation::{
    parse_records, run_attribution, CoalitionCache, EvaluatorAdapter, FailurePolicy, RunOptions,
};
use wfshap_core::report::{
    candidate_series, configuration_sweep, emit_report, EfficiencyCheck, ReportFormat, ReportItem,
};
use wfshap_core::simulator::{simulate_task_outcomes, synthesize_game, SyntheticGameSpec};
use wfshap_core::{
    attribution::attribute, enumerate_coalitions, synergy_matrix, validate_game, ComponentSet,
    EstimatorConfig, GameTable, Severity,
};

use failure::Failure;
use manifest::{read_input, sibling, write_file, RunManifest};

#[derive(Parser)]
#[command(
    name = "wfshap",
    version,
    about = "Shapley attribution for multi-component workflows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shapley values from a game table, a records file, or an attribution table audit.
    Attribute(AttributeArgs),
    /// Pairwise synergy matrix of a game table or a simulator spec.
    Synergy(SynergyArgs),
    /// Per-component best candidate from an attribution table.
    Optimize(OptimizeArgs),
    /// Evaluate every needed coalition through an evaluator and attribute.
    Run(RunArgs),
    /// Ranking consistency between two attribution tables.
    Consistency(ConsistencyArgs),
    /// Pearson correlation between one component's values and judge scores.
    Correlate(CorrelateArgs),
    /// Per-coalition values of a game table in mask order.
    Sweep(SweepArgs),
    /// Draw simulated task outcomes for every coalition as a records file.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    ScoreAsZero,
    Exclude,
}

impl From<PolicyArg> for FailurePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::ScoreAsZero => FailurePolicy::ScoreAsZero,
            PolicyArg::Exclude => FailurePolicy::Exclude,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Also write the report here; the manifest goes to `<out>.manifest`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "table_text", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Args)]
struct EstimatorArgs {
    #[arg(long, value_enum, default_value = "exact")]
    method: MethodArg,
    /// Orderings drawn by the mc method (reversed orderings included).
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    /// Seed for every random choice; generated and recorded in the manifest if absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Draw orderings independently instead of in reversed pairs.
    #[arg(long)]
    no_antithetic: bool,
}

#[derive(Args)]
struct AttributeArgs {
    /// Game table file.
    #[arg(conflicts_with_all = ["records", "table"])]
    game: Option<PathBuf>,
    /// Records file (one task outcome per line); needs --components.
    #[arg(long, requires = "components", conflicts_with = "table")]
    records: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "score-as-zero")]
    failure_policy: PolicyArg,
    /// Attribution table whose reported rows are checked for efficiency.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Restrict the table audit to one candidate.
    #[arg(long, requires = "table")]
    candidate: Option<String>,
    /// Allowed |Σφ - (v(N) - v(∅))| for the table audit.
    #[arg(long, default_value_t = 0.005)]
    tolerance: f64,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SynergyArgs {
    #[arg(conflicts_with = "simulate", required_unless_present = "simulate")]
    game: Option<PathBuf>,
    /// Simulator spec whose noiseless game is analysed.
    #[arg(long)]
    simulate: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    table: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RunArgs {
    /// `subprocess:CMD`, `http:URL` or `sim:SPEC_FILE`.
    #[arg(long)]
    adapter: String,
    #[arg(long, value_delimiter = ',', required = true)]
    components: Vec<String>,
    /// Task ids, one per line.
    #[arg(
        long,
        conflicts_with = "num_tasks",
        required_unless_present = "num_tasks"
    )]
    tasks: Option<PathBuf>,
    /// Use generated task ids t0000, t0001, ...
    #[arg(long)]
    num_tasks: Option<usize>,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Directory for cached coalition outcomes.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, value_enum, default_value = "score-as-zero")]
    failure_policy: PolicyArg,
    /// Per-attempt timeout in seconds for external evaluators.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Result file; the game table goes to `<out>.game.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "table_text", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Args)]
struct ConsistencyArgs {
    table_a: PathBuf,
    table_b: PathBuf,
    /// Component to compare; repeat for several.
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    component: Vec<String>,
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CorrelateArgs {
    table: PathBuf,
    /// JSON object mapping candidate label to judge score.
    scores: PathBuf,
    #[arg(long)]
    component: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    game: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    spec: PathBuf,
    #[arg(long)]
    num_tasks: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Records file to write; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
        .map_err(|e: wfshap_core::report::ReportError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let mut manifest = RunManifest::new(argv);
    let outcome = match cli.command {
        Command::Attribute(a) => cmd_attribute(a, &mut manifest),
        Command::Synergy(a) => cmd_synergy(a, &mut manifest),
        Command::Optimize(a) => cmd_optimize(a, &mut manifest),
        Command::Run(a) => cmd_run(a, &mut manifest),
        Command::Consistency(a) => cmd_consistency(a, &mut manifest),
        Command::Correlate(a) => cmd_correlate(a, &mut manifest),
        Command::Sweep(a) => cmd_sweep(a, &mut manifest),
        Command::Simulate(a) => cmd_simulate(a, &mut manifest),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn resolve_seed(seed: Option<u64>, manifest: &mut RunManifest) -> u64 {
    let seed = seed.unwrap_or_else(rand::random);
    manifest.seed = Some(seed);
    seed
}

fn estimator(args: &EstimatorArgs, manifest: &mut RunManifest) -> EstimatorConfig {
    match args.method {
        MethodArg::Exact => EstimatorConfig::exact(),
        MethodArg::Mc => {
            let seed = resolve_seed(args.seed, manifest);
            EstimatorConfig::permutation(args.samples, seed).with_antithetic(!args.no_antithetic)
        }
    }
}

/// Prints the report, writes it to `--out` and emits the manifest.
fn finish(
    items: &[ReportItem],
    output: &OutputArgs,
    manifest: &RunManifest,
) -> Result<(), Failure> {
    let text = emit_report(items, output.format)?;
    print!("{text}");
    if let Some(out) = &output.out {
        write_file(out, text.as_bytes())?;
    }
    manifest.emit(output.out.as_deref())
}

fn report_findings(game: &GameTable) -> Result<(), Failure> {
    let report = validate_game(game);
    for f in &report.findings {
        let tag = match f.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        eprintln!("{tag}: {}", f.message);
    }
    if report.has_errors() {
        return Err(Failure::validation(anyhow::anyhow!(
            "game table failed validation"
        )));
    }
    Ok(())
}

fn read_game(path: &Path, manifest: &mut RunManifest) -> Result<GameTable, Failure> {
    let text = read_input(path, manifest)?;
    GameTable::from_json_str(&text)
        .map_err(|e| Failure::from(e).context(path.display().to_string()))
}

fn read_table(path: &Path, manifest: &mut RunManifest) -> Result<ModelAttributionTable, Failure> {
    let text = read_input(path, manifest)?;
    ModelAttributionTable::from_json_str(&text)
        .map_err(|e| Failure::from(e).context(path.display().to_string()))
}

fn read_spec(path: &Path, manifest: &mut RunManifest) -> Result<SyntheticGameSpec, Failure> {
    let text = read_input(path, manifest)?;
    SyntheticGameSpec::from_json_str(&text)
        .map_err(|e| Failure::from(e).context(path.display().to_string()))
}

fn cmd_attribute(args: AttributeArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    if let Some(path) = &args.table {
        return audit_table(path, &args, manifest);
    }
    let game = if let Some(path) = &args.records {
        let labels = args.components.clone().unwrap_or_default();
        let components = ComponentSet::new(labels)?;
        let text = read_input(path, manifest)?;
        let records = parse_records(&text, &components, args.failure_policy.into())
            .map_err(|e| Failure::from(e).context(path.display().to_string()))?;
        build_game_from_records(&records, &components)?
    } else if let Some(path) = &args.game {
        read_game(path, manifest)?
    } else {
        return Err(Failure::validation(anyhow::anyhow!(
            "give a game file, --records with --components, or --table"
        )));
    };
    report_findings(&game)?;
    let cfg = estimator(&args.estimator, manifest);
    let result = attribute(&game, &cfg)?;
    finish(&[ReportItem::Attribution(result)], &args.output, manifest)
}

fn audit_table(
    path: &Path,
    args: &AttributeArgs,
    manifest: &mut RunManifest,
) -> Result<(), Failure> {
    let table = read_table(path, manifest)?;
    let rows: Vec<_> = match &args.candidate {
        Some(c) => match table.rows.get_key_value(c.as_str()) {
            Some(kv) => vec![kv],
            None => {
                return Err(Failure::validation(anyhow::anyhow!(
                    "candidate {c:?} not in {}",
                    path.display()
                )))
            }
        },
        None => table.rows.iter().collect(),
    };
    let mut items = Vec::new();
    for (candidate, row) in rows {
        match (row.acc, row.baseline_acc) {
            (Some(acc), Some(base)) => items.push(ReportItem::Efficiency(EfficiencyCheck::new(
                candidate.clone(),
                row.phi.iter().sum(),
                acc - base,
                args.tolerance,
            ))),
            _ => eprintln!("warning: {candidate}: no reported endpoints, skipped"),
        }
    }
    if items.is_empty() {
        return Err(Failure::validation(anyhow::anyhow!(
            "no rows with reported endpoints to check"
        )));
    }
    finish(&items, &args.output, manifest)?;
    let failed: Vec<&str> = items
        .iter()
        .filter_map(|i| match i {
            ReportItem::Efficiency(e) if !e.pass => Some(e.label.as_str()),
            _ => None,
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::validation(anyhow::anyhow!(
            "efficiency residual above {} for: {}",
            args.tolerance,
            failed.join(", ")
        )))
    }
}

fn cmd_synergy(args: SynergyArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let game = match (&args.game, &args.simulate) {
        (Some(path), _) => read_game(path, manifest)?,
        (None, Some(path)) => synthesize_game(&read_spec(path, manifest)?)?.table,
        (None, None) => unreachable!("clap requires one input"),
    };
    let matrix = synergy_matrix(&game)?;
    finish(&[ReportItem::Synergy(matrix)], &args.output, manifest)
}

fn cmd_optimize(args: OptimizeArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let table = read_table(&args.table, manifest)?;
    let cfg = discover_optimal_configuration(&table)?;
    finish(&[ReportItem::Configuration(cfg)], &args.output, manifest)
}

fn cmd_consistency(args: ConsistencyArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let a = read_table(&args.table_a, manifest)?;
    let b = read_table(&args.table_b, manifest)?;
    let selected = (!args.all).then_some(args.component.as_slice());
    let report = table_consistency(&a, &b, selected)?;
    finish(&[ReportItem::Consistency(report)], &args.output, manifest)
}

fn cmd_correlate(args: CorrelateArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let table = read_table(&args.table, manifest)?;
    let k = table.components.index_of(&args.component).ok_or_else(|| {
        Failure::validation(anyhow::anyhow!("unknown component {:?}", args.component))
    })?;
    let text = read_input(&args.scores, manifest)?;
    let scores = serde_json::from_str(&text)
        .map_err(|e| Failure::validation(anyhow::anyhow!("{}: {e}", args.scores.display())))?;
    let series = JudgeScoreSeries {
        component: args.component.clone(),
        scores,
        phi: table.component_values(k),
    };
    let r = correlate_with_judge(&series)?;
    let mut line = candidate_series(&table, k);
    line.points.push(wfshap_core::report::SeriesPoint {
        label: "pearson_r".into(),
        value: r,
    });
    finish(&[ReportItem::Series(line)], &args.output, manifest)
}

fn cmd_sweep(args: SweepArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let game = read_game(&args.game, manifest)?;
    finish(
        &[ReportItem::Series(configuration_sweep(&game))],
        &args.output,
        manifest,
    )
}

fn cmd_simulate(args: SimulateArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let spec = read_spec(&args.spec, manifest)?;
    let components = spec.component_set()?;
    let seed = resolve_seed(args.seed, manifest);
    let mut text = String::new();
    for c in enumerate_coalitions(spec.n())? {
        for r in simulate_task_outcomes(&spec, c, args.num_tasks, seed)? {
            text.push_str(&record_line(&components, c, &r.task_id, Some(r.score)));
            text.push('\n');
        }
    }
    match &args.out {
        Some(out) => write_file(out, text.as_bytes())?,
        None => print!("{text}"),
    }
    manifest.emit(args.out.as_deref())
}

fn read_tasks(path: &Path, manifest: &mut RunManifest) -> Result<Vec<String>, Failure> {
    let text = read_input(path, manifest)?;
    let tasks: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = tasks.iter().find(|t| !seen.insert(t.as_str())) {
        return Err(Failure::validation(anyhow::anyhow!(
            "{}: duplicate task id {dup:?}",
            path.display()
        )));
    }
    Ok(tasks)
}

fn build_adapter(
    args: &RunArgs,
    components: &ComponentSet,
    manifest: &mut RunManifest,
) -> Result<EvaluatorAdapter, Failure> {
    let timeout = Duration::from_secs(args.timeout);
    let (kind, target) = args.adapter.split_once(':').ok_or_else(|| {
        Failure::validation(anyhow::anyhow!(
            "adapter must be subprocess:CMD, http:URL or sim:SPEC, got {:?}",
            args.adapter
        ))
    })?;
    let adapter = match kind {
        "subprocess" => EvaluatorAdapter::subprocess(target, timeout, args.retries)?,
        "http" => EvaluatorAdapter::http(target, timeout, args.retries)?,
        "sim" => {
            let spec = read_spec(Path::new(target), manifest)?;
            if spec.n() != components.len() {
                return Err(Failure::validation(anyhow::anyhow!(
                    "simulator spec has {} components, --components lists {}",
                    spec.n(),
                    components.len()
                )));
            }
            let seed = resolve_seed(manifest.seed.or(args.estimator.seed), manifest);
            EvaluatorAdapter::simulator(spec, seed)?
        }
        other => {
            return Err(Failure::validation(anyhow::anyhow!(
                "unknown adapter kind {other:?}"
            )))
        }
    };
    Ok(adapter)
}

fn cmd_run(args: RunArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let components = ComponentSet::new(args.components.clone())?;
    let tasks = match (&args.tasks, args.num_tasks) {
        (Some(path), _) => read_tasks(path, manifest)?,
        (None, Some(n)) => wfshap_core::simulator::task_ids(n),
        (None, None) => unreachable!("clap requires one task source"),
    };
    let cfg = estimator(&args.estimator, manifest);
    let adapter = build_adapter(&args, &components, manifest)?;
    let cache = match &args.cache {
        Some(dir) => CoalitionCache::persistent(dir)?,
        None => CoalitionCache::in_memory(),
    };
    let options = RunOptions {
        parallel: args.parallel.max(1),
        failure_policy: args.failure_policy.into(),
    };
    let started = Instant::now();
    let output = match run_attribution(&adapter, &components, &tasks, &cfg, &cache, &options) {
        Ok(o) => o,
        Err(e) => {
            if let Some(progress) = &e.progress {
                let text = serde_json::to_string_pretty(progress).expect("progress serializes");
                match &args.out {
                    Some(out) => {
                        let path = sibling(out, "progress");
                        write_file(&path, format!("{text}\n").as_bytes())?;
                        eprintln!("progress manifest written to {}", path.display());
                    }
                    None => eprintln!("progress: {text}"),
                }
            }
            return Err(Failure::from(e.source));
        }
    };
    eprintln!(
        "coalitions: {}  evaluated: {}  cached: {}  elapsed: {:.1}s",
        output.coalitions.len(),
        output.external_evaluations,
        output.cache_hits,
        started.elapsed().as_secs_f64()
    );
    let text = emit_report(
        &[ReportItem::Attribution(output.result.clone())],
        args.format,
    )?;
    print!("{text}");
    if let Some(out) = &args.out {
        write_file(out, output.result.to_json_string().as_bytes())?;
        if let Some(game) = &output.game {
            write_file(&sibling(out, "game.json"), game.to_json_string().as_bytes())?;
        }
        let stale = sibling(out, "progress");
        if stale.exists() {
            let _ = std::fs::remove_file(stale);
        }
    }
    manifest.emit(args.out.as_deref())
}
