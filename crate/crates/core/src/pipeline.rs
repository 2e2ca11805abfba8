//! End-to-end orchestration: diff and coverage in, report and exit code
//! out. Also the commit-history scan built on top of it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::delta::{self, ExecView};
use crate::diff::{self, ChangeSet};
use crate::faultloc::{self, SuspiciousnessRanking};
use crate::model::{load_coverage, CoverageMap, MetricKind, TestId, Version};
use crate::mutator::{self, MutationPlan, MutationSpec};
use crate::probes::{shell_quote, PerfAdapter, ProbeConfig, SimulatedProbeSpec};
use crate::report::{save_report, AnalysisSettings, DeltaReport, GroundTruth, MetricReport, TestEntry, Verdict};
use crate::runner::{self, CommandExecutor, Interleaving, MeasurementLog, RunPlan};
use crate::select::{self, TestSelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Diff,
    Coverage,
    Select,
    Mutate,
    Measure,
    Delta,
    Localize,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Diff => "diff",
            Stage::Coverage => "coverage",
            Stage::Select => "select",
            Stage::Mutate => "mutate",
            Stage::Measure => "measure",
            Stage::Delta => "delta",
            Stage::Localize => "localize",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, err: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: err.to_string(),
        }
    }

    /// Operational failures map to exit codes above 2.
    pub fn exit_code(&self) -> i32 {
        3
    }
}

fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

/// Turns measurements into a report. Localization runs when the verdict
/// metric is breaking, or always with `always_localize`.
#[allow(clippy::too_many_arguments)]
pub fn analyze(
    change: &ChangeSet,
    selection: &TestSelection,
    cov_v1: &CoverageMap,
    cov_v2: &CoverageMap,
    log: &MeasurementLog,
    metrics: &BTreeSet<MetricKind>,
    settings: &AnalysisSettings,
    always_localize: bool,
) -> Result<DeltaReport, PipelineError> {
    let mut report = DeltaReport {
        verdict: Verdict::NoCoveringTests,
        settings: settings.clone(),
        selection: selection.clone(),
        changed_lines: change.line_count(),
        line_weights: Vec::new(),
        theta_total: 0,
        metrics: BTreeMap::new(),
        ranking: None,
        ground_truth: None,
        plan_digest: log.plan_digest.clone(),
        warnings: change.warnings.clone(),
    };
    if selection.selected.is_empty() || selection.no_covering_tests {
        report.verdict = report.derive_verdict();
        return Ok(report);
    }

    let weights = delta::line_weights(change, selection, cov_v1, cov_v2).map_err(at(Stage::Delta))?;
    report.theta_total = weights.iter().map(|w| w.theta).sum();
    let view = ExecView::new(cov_v1, cov_v2);

    let mut all_metrics = metrics.clone();
    all_metrics.insert(settings.verdict_metric);
    let mut verdict_deltas = BTreeMap::new();
    for metric in all_metrics {
        let mut per_test = BTreeMap::new();
        for t in &selection.selected {
            let d = delta::per_test_delta(log, t, metric, settings.aggregator).map_err(at(Stage::Delta))?;
            per_test.insert(t.clone(), d);
        }
        let deltas: BTreeMap<TestId, f64> = per_test.iter().map(|(t, d)| (t.clone(), d.delta)).collect();
        let fragment = delta::weighted_delta(metric, &deltas, &weights, view).map_err(at(Stage::Delta))?;
        let conclusive = delta::commit_conclusiveness(log, &fragment.omega, metric);
        let v = delta::classify(fragment, conclusive, settings.threshold, settings.check_conclusiveness);

        let mut tests = BTreeMap::new();
        let mut unstable = BTreeSet::new();
        for (t, d) in per_test {
            let stable = settings.stability_gate.is_stable(&d.v1_summary) && settings.stability_gate.is_stable(&d.v2_summary);
            if !stable {
                unstable.insert(t.clone());
            }
            tests.insert(
                t.clone(),
                TestEntry {
                    delta: d.delta,
                    omega: v.omega_per_test[&t],
                    capital_omega: v.capital_omega_per_test[&t],
                    v1: d.v1_summary,
                    v2: d.v2_summary,
                    stable,
                },
            );
        }
        if !unstable.is_empty() {
            report.warnings.push(format!(
                "{metric}: {} test(s) exceed the stability gate; consider more repetitions",
                unstable.len()
            ));
        }
        if metric == settings.verdict_metric {
            verdict_deltas = deltas.clone();
        }
        report.metrics.insert(
            metric,
            MetricReport {
                unweighted_sum: deltas.values().sum(),
                tests,
                delta_omega: v.delta_omega,
                breaking: v.breaking,
                conclusive: v.conclusive,
                annotation: v.annotation,
                unstable_tests: unstable,
            },
        );
    }
    report.line_weights = weights;
    report.verdict = report.derive_verdict();

    if report.verdict == Verdict::Breaking || always_localize {
        match localize(change, &verdict_deltas, view) {
            Ok(r) => report.ranking = Some(r),
            Err(e) => report.warnings.push(format!("{} stage: {e}", Stage::Localize)),
        }
    }
    Ok(report)
}

/// Tarantula ranking of the changed lines, splitting tests on the sign of
/// their delta.
pub fn localize(
    change: &ChangeSet,
    deltas: &BTreeMap<TestId, f64>,
    view: ExecView<'_>,
) -> Result<SuspiciousnessRanking, faultloc::FaultLocError> {
    let (failing, passing) = faultloc::partition_tests(deltas);
    let spectrum = faultloc::Spectrum::build(change.changed_lines(), &failing, &passing, view);
    faultloc::tarantula_scores(&spectrum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeOptions {
    pub powercap_root: Option<PathBuf>,
    pub perf_adapter: PerfAdapter,
    pub lock_path: Option<PathBuf>,
    pub simulated: Option<SimulatedProbeSpec>,
    /// File inside each workspace holding a simulated spec: bases from the
    /// v1 workspace apply to v1, bases from the v2 workspace to v2. Seed,
    /// noise and quantum come from the v1 file.
    pub simulated_workspace_file: Option<String>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            powercap_root: None,
            perf_adapter: PerfAdapter::Disabled,
            lock_path: None,
            simulated: None,
            simulated_workspace_file: None,
        }
    }
}

/// Everything about a run except where its inputs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    /// Shell command per test; `{test_id}` and `{workspace}` are substituted.
    pub command: String,
    #[serde(default)]
    pub test_file_globs: Vec<String>,
    #[serde(default)]
    pub all_tests: bool,
    #[serde(default = "default_metrics")]
    pub metrics: BTreeSet<MetricKind>,
    #[serde(default)]
    pub probe: ProbeOptions,
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    #[serde(default = "default_warmup")]
    pub warmup_runs: u32,
    #[serde(default)]
    pub interleaving: Interleaving,
    #[serde(default = "default_settle")]
    pub settle_ms: u64,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub mutation: Option<MutationSpec>,
    /// Program providing the `burn` subcommand for mutations.
    #[serde(default)]
    pub burn_program: Option<String>,
}

fn default_metrics() -> BTreeSet<MetricKind> {
    BTreeSet::from([MetricKind::EnergyPkg])
}

fn default_reps() -> u32 {
    runner::DEFAULT_REPETITIONS
}

fn default_warmup() -> u32 {
    runner::DEFAULT_WARMUP
}

fn default_settle() -> u64 {
    runner::DEFAULT_SETTLE_MS
}

impl PipelineSettings {
    pub fn new(command: impl Into<String>) -> Self {
        PipelineSettings {
            command: command.into(),
            test_file_globs: Vec::new(),
            all_tests: false,
            metrics: default_metrics(),
            probe: ProbeOptions::default(),
            repetitions: default_reps(),
            warmup_runs: default_warmup(),
            interleaving: Interleaving::default(),
            settle_ms: default_settle(),
            timeout_ms: None,
            analysis: AnalysisSettings::default(),
            mutation: None,
            burn_program: None,
        }
    }

    pub fn all_metrics(&self) -> BTreeSet<MetricKind> {
        let mut m = self.metrics.clone();
        m.insert(self.analysis.verdict_metric);
        m
    }

    /// Probe configuration for a pair of workspaces.
    pub fn probe_config(&self, ws_v1: &Path, ws_v2: &Path) -> Result<ProbeConfig, PipelineError> {
        let mut cfg = ProbeConfig::new(self.all_metrics());
        if let Some(root) = &self.probe.powercap_root {
            cfg.powercap_root = root.clone();
        }
        if let Some(lock) = &self.probe.lock_path {
            cfg.lock_path = lock.clone();
        }
        cfg.perf_adapter = self.probe.perf_adapter.clone();
        cfg.simulated = self.probe.simulated.clone();
        if let Some(name) = &self.probe.simulated_workspace_file {
            let load = |ws: &Path| -> Result<SimulatedProbeSpec, PipelineError> {
                let p = ws.join(name);
                let text = fs::read_to_string(&p).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", p.display())))
            };
            let mut spec = load(ws_v1)?;
            let v2 = load(ws_v2)?;
            let v1_base = std::mem::take(&mut spec.per_test_base);
            spec.version_base = BTreeMap::from([(Version::V1, v1_base), (Version::V2, v2.per_test_base)]);
            cfg.simulated = Some(spec);
        }
        cfg.validate().map_err(at(Stage::Config))?;
        Ok(cfg)
    }

    fn run_plan(&self, tests: Vec<TestId>, ws_v1: &Path, ws_v2: &Path) -> RunPlan {
        let mut plan = RunPlan::new(tests, ws_v1.to_owned(), ws_v2.to_owned(), self.command.clone());
        plan.repetitions = self.repetitions;
        plan.warmup_runs = self.warmup_runs;
        plan.interleaving = self.interleaving;
        plan.settle_ms = self.settle_ms;
        plan.timeout_ms = self.timeout_ms;
        plan
    }
}

/// A full pipeline run: inputs plus settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub workspace_v1: PathBuf,
    pub workspace_v2: PathBuf,
    /// Unified diff file, or `-` for standard input.
    pub diff: PathBuf,
    pub coverage_v1: PathBuf,
    pub coverage_v2: PathBuf,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub measurements_out: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: PipelineSettings,
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && p.as_os_str() != "-" {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workspace_v1);
        fix(&mut self.workspace_v2);
        fix(&mut self.diff);
        fix(&mut self.coverage_v1);
        fix(&mut self.coverage_v2);
        if let Some(p) = self.output.as_mut() {
            fix(p);
        }
        if let Some(p) = self.measurements_out.as_mut() {
            fix(p);
        }
        if let Some(p) = self.settings.probe.powercap_root.as_mut() {
            fix(p);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: DeltaReport,
    pub exit_code: i32,
    pub mutation: Option<MutationPlan>,
}

pub fn read_diff(path: &Path) -> Result<ChangeSet, PipelineError> {
    let text = if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(at(Stage::Diff))?;
        s
    } else {
        fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Diff, format!("{}: {e}", path.display())))?
    };
    diff::parse_unified_diff(&text).map_err(at(Stage::Diff))
}

pub fn selection_for(
    change: &ChangeSet,
    cov_v1: &CoverageMap,
    cov_v2: &CoverageMap,
    globs: &[String],
    all_tests: bool,
) -> Result<TestSelection, PipelineError> {
    let test_files = select::test_files_from_globs(&change.touched_files, globs).map_err(at(Stage::Select))?;
    if all_tests {
        select::select_all_tests(change, cov_v1, cov_v2, &test_files)
    } else {
        select::select_tests(change, cov_v1, cov_v2, &test_files)
    }
    .map_err(at(Stage::Select))
}

/// Select, optionally mutate, measure, analyze, and write the report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let s = &config.settings;
    let change = read_diff(&config.diff)?;
    let cov_v1 = load_coverage(&config.coverage_v1).map_err(at(Stage::Coverage))?;
    let cov_v2 = load_coverage(&config.coverage_v2).map_err(at(Stage::Coverage))?;
    let selection = selection_for(&change, &cov_v1, &cov_v2, &s.test_file_globs, s.all_tests)?;
    let probe = s.probe_config(&config.workspace_v1, &config.workspace_v2)?;

    let (log, mutation) = if selection.selected.is_empty() || selection.no_covering_tests {
        (MeasurementLog::default(), None)
    } else {
        let plan = s.run_plan(selection.selected.iter().cloned().collect(), &config.workspace_v1, &config.workspace_v2);
        plan.validate().map_err(at(Stage::Config))?;
        let mut exec = CommandExecutor::from_plan(&plan);
        let mutation = match &s.mutation {
            Some(spec) => {
                let mplan = mutator::plan_mutation(spec, &selection, &cov_v1, &cov_v2).map_err(at(Stage::Mutate))?;
                let program = s
                    .burn_program
                    .as_deref()
                    .ok_or_else(|| PipelineError::new(Stage::Config, "mutation requires burn_program"))?;
                let cmd = mplan.burn_command(program, &burn_probe_args(&probe));
                exec = mplan.apply(exec, &cmd);
                Some(mplan)
            }
            None => None,
        };
        let log = runner::execute_plan(&plan, &probe, &mut exec).map_err(at(Stage::Measure))?;
        if let Some(out) = &config.measurements_out {
            log.save(out).map_err(at(Stage::Measure))?;
        }
        (log, mutation)
    };

    let mut report = analyze(&change, &selection, &cov_v1, &cov_v2, &log, &s.metrics, &s.analysis, false)?;
    if let Some(m) = &mutation {
        report.ground_truth = Some(GroundTruth {
            best_rank: report.ranking.as_ref().and_then(|r| r.best_rank(&m.ground_truth_lines)),
            lines: m.ground_truth_lines.clone(),
        });
    }
    if let Some(out) = &config.output {
        save_report(&report, out).map_err(at(Stage::Report))?;
    }
    Ok(PipelineOutcome {
        exit_code: report.verdict.exit_code(),
        report,
        mutation,
    })
}

/// Probe flags for a `burn` child so it reads the same energy source.
fn burn_probe_args(probe: &ProbeConfig) -> Vec<String> {
    match &probe.simulated {
        Some(spec) => vec!["--simulated-quantum-uj".into(), spec.energy_quantum_uj.to_string()],
        None => vec!["--powercap-root".into(), probe.powercap_root.display().to_string()],
    }
}

/// Command templates for walking a commit history. Placeholders are
/// substituted shell-quoted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryConfig {
    /// Materializes a revision: `{repo}`, `{ref}`, `{dest}`.
    pub checkout: String,
    /// Prints the unified diff between two revisions: `{repo}`, `{from}`, `{to}`.
    pub diff: String,
    /// Writes coverage for a workspace: `{workspace}`, `{version}`, `{output}`.
    pub coverage: String,
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: PipelineSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub from: String,
    pub to: String,
    pub verdict: Option<Verdict>,
    pub selected_tests: Option<usize>,
    pub delta_omega: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub rows: Vec<HistoryRow>,
    pub breaking: usize,
    pub evaluated: usize,
}

impl HistorySummary {
    /// Breaking commits over commits analyzed without error.
    pub fn breaking_ratio(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.breaking as f64 / self.evaluated as f64
        }
    }

    pub fn to_csv(&self) -> Result<String, PipelineError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["from", "to", "verdict", "selected_tests", "delta_omega", "error"])
            .map_err(at(Stage::Report))?;
        for r in &self.rows {
            w.write_record([
                r.from.clone(),
                r.to.clone(),
                r.verdict.map(|v| v.as_str().to_owned()).unwrap_or_default(),
                r.selected_tests.map(|n| n.to_string()).unwrap_or_default(),
                r.delta_omega.map(|d| d.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(at(Stage::Report))?;
        }
        let mut out = String::from_utf8(w.into_inner().map_err(at(Stage::Report))?).map_err(at(Stage::Report))?;
        out.push_str(&format!(
            "# breaking_ratio={:.4} ({}/{} evaluated, {} errors)\n",
            self.breaking_ratio(),
            self.breaking,
            self.evaluated,
            self.rows.len() - self.evaluated
        ));
        Ok(out)
    }
}

/// Commit pairs from a list: `<from> <to>` lines are taken as is, a lone
/// ref is paired with the previous listed ref.
pub fn parse_commit_list(text: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut prev: Option<String> = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [from, to, ..] => {
                pairs.push((from.to_string(), to.to_string()));
                prev = Some(to.to_string());
            }
            [single] => {
                if let Some(p) = prev.take() {
                    pairs.push((p, single.to_string()));
                }
                prev = Some(single.to_string());
            }
            [] => {}
        }
    }
    pairs
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.to_owned(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), &shell_quote(v)))
}

fn sh(cmd: &str) -> Result<Vec<u8>, String> {
    let out = Command::new("sh").arg("-c").arg(cmd).output().map_err(|e| format!("`{cmd}`: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`{cmd}` exited with {}: {}",
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out.stdout)
}

/// Analyzes every commit pair. Failures are recorded per row and the scan
/// continues.
pub fn history_scan(repo: &Path, commits: &[(String, String)], config: &HistoryConfig) -> Result<HistorySummary, PipelineError> {
    let scratch = match &config.scratch_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(at(Stage::Config))?;
            tempfile::Builder::new().prefix("history").tempdir_in(d)
        }
        None => tempfile::Builder::new().prefix("joulediff-history").tempdir(),
    }
    .map_err(at(Stage::Config))?;
    let mut rows = Vec::new();
    for (i, (from, to)) in commits.iter().enumerate() {
        let dir = scratch.path().join(format!("{i:04}"));
        let row = match scan_one(repo, from, to, &dir, config) {
            Ok(report) => HistoryRow {
                from: from.clone(),
                to: to.clone(),
                verdict: Some(report.verdict),
                selected_tests: Some(report.selection.selected.len()),
                delta_omega: report.metrics.get(&config.settings.analysis.verdict_metric).map(|m| m.delta_omega),
                error: None,
            },
            Err(e) => {
                log::warn!("{from}..{to}: {e}");
                HistoryRow {
                    from: from.clone(),
                    to: to.clone(),
                    verdict: None,
                    selected_tests: None,
                    delta_omega: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
        let _ = fs::remove_dir_all(&dir);
    }
    let evaluated = rows.iter().filter(|r| r.error.is_none()).count();
    let breaking = rows.iter().filter(|r| r.verdict == Some(Verdict::Breaking)).count();
    Ok(HistorySummary {
        rows,
        breaking,
        evaluated,
    })
}

fn scan_one(repo: &Path, from: &str, to: &str, dir: &Path, config: &HistoryConfig) -> Result<DeltaReport, PipelineError> {
    let repo_s = repo.display().to_string();
    fs::create_dir_all(dir).map_err(at(Stage::Config))?;
    let ws = |v: Version| dir.join(v.as_str());
    for (v, r) in [(Version::V1, from), (Version::V2, to)] {
        let dest = ws(v).display().to_string();
        sh(&fill(&config.checkout, &[("repo", &repo_s), ("ref", r), ("dest", &dest)])).map_err(at(Stage::Config))?;
    }
    let diff_text = sh(&fill(&config.diff, &[("repo", &repo_s), ("from", from), ("to", to)])).map_err(at(Stage::Diff))?;
    let diff_path = dir.join("change.diff");
    fs::write(&diff_path, diff_text).map_err(at(Stage::Diff))?;
    let mut cov_paths = Vec::new();
    for v in Version::BOTH {
        let out = dir.join(format!("coverage_{}.json", v.as_str()));
        let workspace = ws(v).display().to_string();
        let output = out.display().to_string();
        sh(&fill(&config.coverage, &[("workspace", &workspace), ("version", v.as_str()), ("output", &output)]))
            .map_err(at(Stage::Coverage))?;
        // the same revision is v2 of one pair and v1 of the next, so retag
        let mut cov = load_coverage(&out).map_err(at(Stage::Coverage))?;
        cov.version = v;
        fs::write(&out, cov.to_json_string()).map_err(at(Stage::Coverage))?;
        cov_paths.push(out);
    }
    let cfg = PipelineConfig {
        workspace_v1: ws(Version::V1),
        workspace_v2: ws(Version::V2),
        diff: diff_path,
        coverage_v1: cov_paths[0].clone(),
        coverage_v2: cov_paths[1].clone(),
        output: None,
        measurements_out: None,
        settings: config.settings.clone(),
    };
    Ok(run_pipeline(&cfg)?.report)
}
