use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use joulediff::delta::{Aggregator, Threshold};
use joulediff::model::{load_coverage, MetricKind, TestId};
use joulediff::mutator::{consume_energy, SeedSource};
use joulediff::pipeline::{self, HistoryConfig, PipelineConfig, PipelineError};
use joulediff::probes::{PerfAdapter, ProbeConfig, SimulatedProbeSpec};
use joulediff::report::{save_report, AnalysisSettings, DeltaReport};
use joulediff::runner::{self, CommandExecutor, Interleaving, MeasurementLog, RunPlan};
use joulediff::select::TestSelection;
use joulediff::simlab::{self, Scenario};
use joulediff::stats::StabilityGate;

/// Exit code for operational failures; 0, 1 and 2 are verdicts.
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "joulediff", version, about = "Detect energy regressions introduced by a code change")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Cmd {
    /// Select the tests that execute changed lines.
    Select {
        #[command(flatten)]
        change: ChangeArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Measure tests on both versions and write a JSON Lines log.
    Measure {
        /// Tests to measure, comma separated.
        #[arg(long, value_delimiter = ',', conflicts_with = "selection")]
        tests: Vec<String>,
        /// Selection file written by `select`.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compute the weighted delta and verdict from a measurement log.
    Delta {
        #[command(flatten)]
        change: ChangeArgs,
        #[arg(long)]
        measurements: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Metrics to report besides the verdict metric, comma separated.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<MetricKind>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Rank changed lines by suspiciousness.
    Localize {
        #[command(flatten)]
        change: ChangeArgs,
        #[arg(long)]
        measurements: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Full pipeline from a JSON config; flags override config fields.
    Run(RunCmd),
    /// Analyze every commit pair of a history.
    History {
        #[arg(long)]
        repo: PathBuf,
        /// One ref per line (paired with the previous one) or `from to`.
        #[arg(long)]
        commits: PathBuf,
        /// JSON with `checkout`, `diff`, `coverage` templates and pipeline settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Burn a fixed energy payload.
    Burn {
        #[arg(long)]
        payload_uj: u64,
        /// Fixed seed; the wall clock is used when absent.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        check_every: u64,
        /// Use the simulated probe advancing this many µJ per read.
        #[arg(long, conflicts_with = "powercap_root")]
        simulated_quantum_uj: Option<u64>,
        #[arg(long)]
        powercap_root: Option<PathBuf>,
        #[arg(long)]
        lock_path: Option<PathBuf>,
    },
    /// Run a synthetic scenario and print its outcome.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        payload_uj: Option<u64>,
        /// Print a generated rq2 or rq3 scenario for this seed instead.
        #[arg(long, value_name = "KIND")]
        generate: Option<GenKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise_rel: Option<f64>,
    },
    /// Run a scenario over several payload sizes and print a CSV.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        payloads: Vec<u64>,
        #[arg(long, default_value_t = 10)]
        trials: u32,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Rq2,
    Rq3,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerfKind {
    Os,
    Cmd,
    Off,
}

#[derive(Args)]
struct ChangeArgs {
    /// Unified diff, or `-` for standard input.
    #[arg(long)]
    diff: PathBuf,
    #[arg(long)]
    coverage_v1: PathBuf,
    #[arg(long)]
    coverage_v2: PathBuf,
    /// Glob identifying test source files (repeatable).
    #[arg(long = "test-glob")]
    test_globs: Vec<String>,
    /// Keep every test, not only those covering the change.
    #[arg(long)]
    all_tests: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    workspace_v1: PathBuf,
    #[arg(long)]
    workspace_v2: PathBuf,
    /// Shell command per test; `{test_id}` and `{workspace}` are substituted.
    #[arg(long)]
    command: String,
    #[arg(long, default_value_t = runner::DEFAULT_REPETITIONS)]
    reps: u32,
    #[arg(long, default_value_t = runner::DEFAULT_WARMUP)]
    warmup: u32,
    #[arg(long, default_value = "alternating")]
    interleave: Interleaving,
    #[arg(long, default_value_t = runner::DEFAULT_SETTLE_MS)]
    settle_ms: u64,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Metrics to collect, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "energy_pkg_uj")]
    metrics: Vec<MetricKind>,
    #[arg(long)]
    powercap_root: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PerfKind::Off)]
    perf: PerfKind,
    /// Template for `--perf cmd`, with `{output}` and `{events}`.
    #[arg(long)]
    perf_template: Option<String>,
    /// Simulated probe spec (JSON) instead of hardware.
    #[arg(long)]
    simulated: Option<PathBuf>,
    /// Per-workspace simulated spec file name.
    #[arg(long)]
    simulated_workspace_file: Option<String>,
    #[arg(long)]
    lock_path: Option<PathBuf>,
}

#[derive(Args)]
struct AnalysisArgs {
    #[arg(long, default_value = "energy_pkg_uj")]
    verdict_metric: MetricKind,
    #[arg(long, default_value = "median")]
    aggregator: Aggregator,
    /// Δ_Ω must exceed this to count as breaking.
    #[arg(long, conflicts_with = "relative_threshold")]
    threshold: Option<f64>,
    /// Δ_Ω / Σ|Ω| must exceed this to count as breaking.
    #[arg(long)]
    relative_threshold: Option<f64>,
    /// Do not require disjoint v1/v2 ranges for a breaking verdict.
    #[arg(long)]
    no_conclusiveness: bool,
    #[arg(long)]
    max_cv: Option<f64>,
    #[arg(long)]
    max_qcd: Option<f64>,
}

impl AnalysisArgs {
    fn settings(&self) -> AnalysisSettings {
        let mut s = AnalysisSettings {
            verdict_metric: self.verdict_metric,
            aggregator: self.aggregator,
            check_conclusiveness: !self.no_conclusiveness,
            ..AnalysisSettings::default()
        };
        if let Some(t) = self.threshold {
            s.threshold = Threshold::Absolute(t);
        }
        if let Some(t) = self.relative_threshold {
            s.threshold = Threshold::Relative(t);
        }
        let gate = StabilityGate::default();
        s.stability_gate = StabilityGate {
            max_cv: self.max_cv.unwrap_or(gate.max_cv),
            max_qcd: self.max_qcd.unwrap_or(gate.max_qcd),
        };
        s
    }
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workspace_v1: Option<PathBuf>,
    #[arg(long)]
    workspace_v2: Option<PathBuf>,
    #[arg(long)]
    diff: Option<PathBuf>,
    #[arg(long)]
    coverage_v1: Option<PathBuf>,
    #[arg(long)]
    coverage_v2: Option<PathBuf>,
    #[arg(long)]
    command: Option<String>,
    #[arg(long = "test-glob")]
    test_globs: Vec<String>,
    #[arg(long)]
    all_tests: bool,
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<MetricKind>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    warmup: Option<u32>,
    #[arg(long)]
    interleave: Option<Interleaving>,
    #[arg(long)]
    settle_ms: Option<u64>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    powercap_root: Option<PathBuf>,
    #[arg(long, value_enum)]
    perf: Option<PerfKind>,
    #[arg(long)]
    perf_template: Option<String>,
    #[arg(long)]
    simulated: Option<PathBuf>,
    #[arg(long)]
    simulated_workspace_file: Option<String>,
    #[arg(long)]
    lock_path: Option<PathBuf>,
    #[arg(long)]
    verdict_metric: Option<MetricKind>,
    #[arg(long)]
    aggregator: Option<Aggregator>,
    #[arg(long, conflicts_with = "relative_threshold")]
    threshold: Option<f64>,
    #[arg(long)]
    relative_threshold: Option<f64>,
    #[arg(long)]
    no_conclusiveness: bool,
    #[arg(long)]
    max_cv: Option<f64>,
    #[arg(long)]
    max_qcd: Option<f64>,
    /// Mutation spec (JSON) injecting an energy payload into v2.
    #[arg(long)]
    mutation: Option<PathBuf>,
    #[arg(long)]
    burn_program: Option<String>,
    #[arg(long)]
    measurements_out: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Select { change, output } => {
            let (_, selection, _, _) = load_change(&change)?;
            emit(&(serde_json::to_string_pretty(&selection)? + "\n"), output.as_deref())?;
            Ok(0)
        }
        Cmd::Measure {
            tests,
            selection,
            run,
            probe,
            output,
        } => {
            let tests: Vec<TestId> = match selection {
                Some(p) => {
                    let sel: TestSelection = serde_json::from_str(&read(&p)?).with_context(|| format!("{}", p.display()))?;
                    sel.selected.into_iter().collect()
                }
                None => tests.iter().map(TestId::new).collect::<Result<_, _>>()?,
            };
            if tests.is_empty() {
                bail!("no tests to measure; pass --tests or --selection");
            }
            let plan = run_plan(tests, &run);
            let probe = probe_config(&probe, &run.workspace_v1, &run.workspace_v2)?;
            let mut exec = CommandExecutor::from_plan(&plan);
            let log = runner::execute_plan(&plan, &probe, &mut exec).map_err(|e| PipelineError::new(pipeline::Stage::Measure, e))?;
            match output {
                Some(p) => log.save(&p)?,
                None => print!("{}", log.to_jsonl()),
            }
            Ok(0)
        }
        Cmd::Delta {
            change,
            measurements,
            analysis,
            metrics,
            output,
            format,
        } => {
            let report = analyze(&change, &measurements, &analysis, &metrics, false)?;
            if let Some(p) = &output {
                save_report(&report, p)?;
            }
            print_report(&report, format)?;
            Ok(report.verdict.exit_code() as u8)
        }
        Cmd::Localize {
            change,
            measurements,
            analysis,
            format,
        } => {
            let report = analyze(&change, &measurements, &analysis, &[], true)?;
            let Some(ranking) = &report.ranking else {
                bail!("no test increased {}; nothing to rank", analysis.verdict_metric);
            };
            match format {
                Format::Table => print!("{}", ranking.render_table()),
                Format::Json => println!("{}", serde_json::to_string_pretty(ranking)?),
            }
            Ok(0)
        }
        Cmd::Run(args) => run(args),
        Cmd::History {
            repo,
            commits,
            config,
            output,
        } => {
            let cfg: HistoryConfig = serde_json::from_str(&read(&config)?).with_context(|| format!("{}", config.display()))?;
            let pairs = pipeline::parse_commit_list(&read(&commits)?);
            let summary = pipeline::history_scan(&repo, &pairs, &cfg)?;
            emit(&summary.to_csv()?, output.as_deref())?;
            Ok(0)
        }
        Cmd::Burn {
            payload_uj,
            seed,
            check_every,
            simulated_quantum_uj,
            powercap_root,
            lock_path,
        } => {
            let mut probe = match simulated_quantum_uj {
                Some(q) => {
                    let mut spec = SimulatedProbeSpec::new(0, 0.0);
                    spec.energy_quantum_uj = q;
                    ProbeConfig::simulated([MetricKind::EnergyPkg], spec)
                }
                None => ProbeConfig::new([MetricKind::EnergyPkg]),
            };
            if let Some(root) = powercap_root {
                probe.powercap_root = root;
            }
            if let Some(lock) = lock_path {
                probe.lock_path = lock;
            }
            let seed = seed.map_or(SeedSource::WallClock, SeedSource::FixedSeed);
            let result = consume_energy(&probe, payload_uj, seed, check_every)?;
            println!("{}", serde_json::to_string(&result)?);
            Ok(0)
        }
        Cmd::Simulate {
            scenario,
            payload_uj,
            generate,
            seed,
            noise_rel,
        } => {
            if let Some(kind) = generate {
                let mut gs = simlab::GeneratorSettings::default();
                if let Some(n) = noise_rel {
                    gs.noise_rel = n;
                }
                let s = match kind {
                    GenKind::Rq2 => simlab::generate_rq2_scenario(seed, &gs),
                    GenKind::Rq3 => simlab::generate_rq3_scenario(seed, &gs),
                };
                emit(&(serde_json::to_string_pretty(&s)? + "\n"), Some(&scenario))?;
                return Ok(0);
            }
            let s = load_scenario(&scenario)?;
            let result = s.run_with_payload(payload_uj)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(0)
        }
        Cmd::Sweep {
            scenario,
            payloads,
            trials,
            output,
        } => {
            let s = load_scenario(&scenario)?;
            let rows = simlab::sweep(&s, &payloads, trials)?;
            emit(&simlab::sweep_csv(&rows)?, output.as_deref())?;
            Ok(0)
        }
    }
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_scenario(p: &Path) -> Result<Scenario> {
    serde_json::from_str(&read(p)?).with_context(|| format!("{} is not a scenario file", p.display()))
}

type Loaded = (
    joulediff::diff::ChangeSet,
    TestSelection,
    joulediff::model::CoverageMap,
    joulediff::model::CoverageMap,
);

fn load_change(args: &ChangeArgs) -> Result<Loaded> {
    let change = pipeline::read_diff(&args.diff)?;
    let v1 = load_coverage(&args.coverage_v1).map_err(|e| PipelineError::new(pipeline::Stage::Coverage, e))?;
    let v2 = load_coverage(&args.coverage_v2).map_err(|e| PipelineError::new(pipeline::Stage::Coverage, e))?;
    let selection = pipeline::selection_for(&change, &v1, &v2, &args.test_globs, args.all_tests)?;
    Ok((change, selection, v1, v2))
}

fn analyze(
    change: &ChangeArgs,
    measurements: &Path,
    analysis: &AnalysisArgs,
    metrics: &[MetricKind],
    always_localize: bool,
) -> Result<DeltaReport> {
    let (change, selection, v1, v2) = load_change(change)?;
    let log = MeasurementLog::load(measurements)?;
    let metrics: BTreeSet<MetricKind> = metrics.iter().copied().collect();
    Ok(pipeline::analyze(&change, &selection, &v1, &v2, &log, &metrics, &analysis.settings(), always_localize)?)
}

fn print_report(report: &DeltaReport, format: Format) -> Result<()> {
    match format {
        Format::Json => print!("{}", report.to_canonical_json()?),
        Format::Table => print!("{}", report.render_table()),
    }
    Ok(())
}

fn run_plan(tests: Vec<TestId>, run: &RunArgs) -> RunPlan {
    let mut plan = RunPlan::new(tests, run.workspace_v1.clone(), run.workspace_v2.clone(), run.command.clone());
    plan.repetitions = run.reps;
    plan.warmup_runs = run.warmup;
    plan.interleaving = run.interleave;
    plan.settle_ms = run.settle_ms;
    plan.timeout_ms = run.timeout_ms;
    plan
}

fn perf_adapter(kind: PerfKind, template: Option<&str>) -> PerfAdapter {
    match kind {
        PerfKind::Os => PerfAdapter::OsPerfInterface,
        PerfKind::Cmd => PerfAdapter::ExternalPerfCommand {
            template: template.unwrap_or(joulediff::probes::perf::DEFAULT_PERF_TEMPLATE).to_owned(),
        },
        PerfKind::Off => PerfAdapter::Disabled,
    }
}

fn probe_config(args: &ProbeArgs, ws_v1: &Path, ws_v2: &Path) -> Result<ProbeConfig> {
    let mut settings = pipeline::PipelineSettings::new("{test_id}");
    settings.metrics = args.metrics.iter().copied().collect();
    settings.analysis.verdict_metric = *args.metrics.first().unwrap_or(&MetricKind::EnergyPkg);
    settings.probe.powercap_root = args.powercap_root.clone();
    settings.probe.lock_path = args.lock_path.clone();
    settings.probe.perf_adapter = perf_adapter(args.perf, args.perf_template.as_deref());
    settings.probe.simulated_workspace_file = args.simulated_workspace_file.clone();
    if let Some(p) = &args.simulated {
        settings.probe.simulated = Some(serde_json::from_str(&read(p)?).with_context(|| format!("{}", p.display()))?);
    }
    Ok(settings.probe_config(ws_v1, ws_v2)?)
}

fn absolute(p: &Path) -> Result<String> {
    let p = if p.is_relative() && p.as_os_str() != "-" {
        std::env::current_dir()?.join(p)
    } else {
        p.to_owned()
    };
    Ok(p.display().to_string())
}

fn set(obj: &mut Map<String, Value>, key: &str, value: Value) {
    obj.insert(key.to_owned(), value);
}

fn nested<'a>(obj: &'a mut Map<String, Value>, key: &str) -> Result<&'a mut Map<String, Value>> {
    obj.entry(key.to_owned())
        .or_insert_with(|| json!({}))
        .as_object_mut()
        .with_context(|| format!("config field `{key}` must be an object"))
}

/// Config file fields, then flags on top.
fn run_config(args: &RunCmd) -> Result<PipelineConfig> {
    let (mut root, base) = match &args.config {
        Some(p) => {
            let v: Value = serde_json::from_str(&read(p)?).with_context(|| format!("{}", p.display()))?;
            (v, p.parent().map(Path::to_owned))
        }
        None => (json!({}), None),
    };
    let obj = root.as_object_mut().context("config must be a JSON object")?;
    for (key, path) in [
        ("workspace_v1", &args.workspace_v1),
        ("workspace_v2", &args.workspace_v2),
        ("diff", &args.diff),
        ("coverage_v1", &args.coverage_v1),
        ("coverage_v2", &args.coverage_v2),
        ("output", &args.output),
        ("measurements_out", &args.measurements_out),
    ] {
        if let Some(p) = path {
            set(obj, key, json!(absolute(p)?));
        }
    }
    if let Some(c) = &args.command {
        set(obj, "command", json!(c));
    }
    if !args.test_globs.is_empty() {
        set(obj, "test_file_globs", json!(args.test_globs));
    }
    if args.all_tests {
        set(obj, "all_tests", json!(true));
    }
    if !args.metrics.is_empty() {
        set(obj, "metrics", serde_json::to_value(&args.metrics)?);
    }
    if let Some(v) = args.reps {
        set(obj, "repetitions", json!(v));
    }
    if let Some(v) = args.warmup {
        set(obj, "warmup_runs", json!(v));
    }
    if let Some(v) = args.interleave {
        set(obj, "interleaving", serde_json::to_value(v)?);
    }
    if let Some(v) = args.settle_ms {
        set(obj, "settle_ms", json!(v));
    }
    if let Some(v) = args.timeout_ms {
        set(obj, "timeout_ms", json!(v));
    }
    if let Some(b) = &args.burn_program {
        set(obj, "burn_program", json!(b));
    }
    if let Some(m) = &args.mutation {
        let spec: Value = serde_json::from_str(&read(m)?).with_context(|| format!("{}", m.display()))?;
        set(obj, "mutation", spec);
    }
    {
        let probe = nested(obj, "probe")?;
        if let Some(p) = &args.powercap_root {
            set(probe, "powercap_root", json!(absolute(p)?));
        }
        if let Some(k) = args.perf {
            set(probe, "perf_adapter", serde_json::to_value(perf_adapter(k, args.perf_template.as_deref()))?);
        }
        if let Some(p) = &args.simulated {
            set(probe, "simulated", serde_json::from_str(&read(p)?).with_context(|| format!("{}", p.display()))?);
        }
        if let Some(f) = &args.simulated_workspace_file {
            set(probe, "simulated_workspace_file", json!(f));
        }
        if let Some(p) = &args.lock_path {
            set(probe, "lock_path", json!(absolute(p)?));
        }
    }
    {
        let a = nested(obj, "analysis")?;
        if let Some(m) = args.verdict_metric {
            set(a, "verdict_metric", serde_json::to_value(m)?);
        }
        if let Some(g) = args.aggregator {
            set(a, "aggregator", serde_json::to_value(g)?);
        }
        if let Some(t) = args.threshold {
            set(a, "threshold", serde_json::to_value(Threshold::Absolute(t))?);
        }
        if let Some(t) = args.relative_threshold {
            set(a, "threshold", serde_json::to_value(Threshold::Relative(t))?);
        }
        if args.no_conclusiveness {
            set(a, "check_conclusiveness", json!(false));
        }
        let gate = nested(a, "stability_gate")?;
        let defaults = StabilityGate::default();
        gate.entry("max_cv").or_insert(json!(defaults.max_cv));
        gate.entry("max_qcd").or_insert(json!(defaults.max_qcd));
        if let Some(v) = args.max_cv {
            set(gate, "max_cv", json!(v));
        }
        if let Some(v) = args.max_qcd {
            set(gate, "max_qcd", json!(v));
        }
    }
    let mut cfg: PipelineConfig = serde_json::from_value(root).context("incomplete pipeline configuration")?;
    if let Some(base) = base {
        cfg.resolve_relative(&base);
    }
    if cfg.settings.mutation.is_some() && cfg.settings.burn_program.is_none() {
        cfg.settings.burn_program = Some(std::env::current_exe()?.display().to_string());
    }
    Ok(cfg)
}

fn run(args: RunCmd) -> Result<u8> {
    let cfg = run_config(&args)?;
    let outcome = pipeline::run_pipeline(&cfg)?;
    match (args.format, &cfg.output) {
        // the report file already holds the JSON
        (Format::Json, Some(_)) | (Format::Table, _) => print!("{}", outcome.report.render_table()),
        (Format::Json, None) => print!("{}", outcome.report.to_canonical_json()?),
    }
    Ok(outcome.exit_code as u8)
}
