//! Synthetic projects for running detection and localization experiments
//! without hardware.
//!
//! A test's energy is linear in what it executes:
//! `E(t) = overhead(t) + Σ_l exec(l,t)·cost(l)`. Mutations change line
//! costs in v2; measurements go through the simulated probe, so noise is
//! `E·(1+u)` with `u ~ U(−noise_rel, noise_rel)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::delta::ExecView;
use crate::diff;
use crate::model::{CoverageMap, LineRef, MetricKind, TestId, Version};
use crate::pipeline::{self, PipelineError};
use crate::probes::{ProbeConfig, SimulatedProbeSpec};
use crate::report::{AnalysisSettings, DeltaReport, Verdict};
use crate::rng::SplitMix;
use crate::runner::{self, MeasurementLog, NoopExecutor, RunError, RunPlan};
use crate::stats::{self, StabilitySummary};

pub const DEFAULT_REPS: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid synthetic project: {0}")]
    Invalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLine {
    pub file: String,
    pub line: u32,
    /// µJ per execution.
    pub cost_uj: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub file: String,
    pub line: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTest {
    pub id: TestId,
    pub coverage: Vec<CoverageEntry>,
    /// Energy spent outside the modelled lines.
    #[serde(default)]
    pub overhead_uj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProject {
    pub lines: Vec<SyntheticLine>,
    pub tests: Vec<SyntheticTest>,
    #[serde(default)]
    pub noise_rel: f64,
    pub seed: u64,
}

type Pos = (String, u32);

/// A v2 edit of one existing line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineChange {
    pub file: String,
    pub line: u32,
    pub cost_delta_uj: f64,
}

impl SyntheticProject {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.tests.is_empty() {
            return bad("at least one test is required".into());
        }
        if !(0.0..1.0).contains(&self.noise_rel) {
            return bad(format!("noise_rel must be in [0, 1), got {}", self.noise_rel));
        }
        let mut known = BTreeSet::new();
        for l in &self.lines {
            crate::model::normalize_path(&l.file).map_err(|e| SimError::Invalid(e.to_string()))?;
            if l.line == 0 {
                return bad(format!("{}: line numbers start at 1", l.file));
            }
            if !l.cost_uj.is_finite() || l.cost_uj < 0.0 {
                return bad(format!("{}:{} has negative or non-finite cost", l.file, l.line));
            }
            if !known.insert((l.file.clone(), l.line)) {
                return bad(format!("{}:{} is listed twice", l.file, l.line));
            }
        }
        let mut ids = BTreeSet::new();
        for t in &self.tests {
            if !ids.insert(&t.id) {
                return bad(format!("test {} is listed twice", t.id));
            }
            if !t.overhead_uj.is_finite() || t.overhead_uj < 0.0 {
                return bad(format!("test {} has negative or non-finite overhead", t.id));
            }
            for c in &t.coverage {
                if !known.contains(&(c.file.clone(), c.line)) {
                    return bad(format!("test {} covers unknown line {}:{}", t.id, c.file, c.line));
                }
                if c.count == 0 {
                    return bad(format!("test {} lists {}:{} with count 0", t.id, c.file, c.line));
                }
            }
        }
        Ok(())
    }

    pub fn costs(&self) -> BTreeMap<Pos, f64> {
        self.lines.iter().map(|l| ((l.file.clone(), l.line), l.cost_uj)).collect()
    }

    fn has_line(&self, file: &str, line: u32) -> bool {
        self.lines.iter().any(|l| l.file == file && l.line == line)
    }

    pub fn energy(&self, test: &SyntheticTest, costs: &BTreeMap<Pos, f64>) -> f64 {
        test.overhead_uj
            + test
                .coverage
                .iter()
                .map(|c| c.count as f64 * costs[&(c.file.clone(), c.line)])
                .sum::<f64>()
    }

    /// Line numbers are unchanged by the single-line edits used here, so
    /// both versions share one coverage layout.
    pub fn coverage(&self, version: Version) -> CoverageMap {
        let mut cov = CoverageMap::new(version);
        for t in &self.tests {
            cov.add_test(t.id.clone());
            for c in &t.coverage {
                cov.insert(t.id.clone(), &c.file, c.line, c.count).expect("validated coverage");
            }
        }
        cov
    }

    pub fn tests_covering(&self, file: &str, line: u32) -> Vec<&SyntheticTest> {
        self.tests
            .iter()
            .filter(|t| t.coverage.iter().any(|c| c.file == file && c.line == line))
            .collect()
    }

    /// Largest noise amplitude `noise_rel·E_v1(t)` among the tests covering a line.
    pub fn noise_amplitude(&self, file: &str, line: u32) -> f64 {
        let costs = self.costs();
        self.tests_covering(file, line)
            .iter()
            .map(|t| self.noise_rel * self.energy(t, &costs))
            .fold(0.0, f64::max)
    }
}

/// Unified diff replacing each changed line in place.
pub fn diff_text(changes: &[LineChange]) -> String {
    let mut by_file: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
    for c in changes {
        by_file.entry(&c.file).or_default().insert(c.line);
    }
    let mut out = String::new();
    for (file, lines) in by_file {
        let _ = writeln!(out, "diff --git a/{file} b/{file}\n--- a/{file}\n+++ b/{file}");
        for l in lines {
            let _ = writeln!(out, "@@ -{l},1 +{l},1 @@\n-    line {l}\n+    line {l} (edited)");
        }
    }
    out
}

fn duration_of(energy_uj: f64) -> f64 {
    1e-3 + energy_uj * 1e-7
}

/// One simulated commit: run selection, measurement and analysis.
pub fn simulate_change(
    project: &SyntheticProject,
    changes: &[LineChange],
    reps: u32,
    settings: &AnalysisSettings,
) -> Result<(DeltaReport, MeasurementLog), SimError> {
    project.validate()?;
    let mut costs_v2 = project.costs();
    for c in changes {
        let cost = costs_v2
            .get_mut(&(c.file.clone(), c.line))
            .ok_or_else(|| SimError::Precondition(format!("changed line {}:{} is not in the project", c.file, c.line)))?;
        *cost += c.cost_delta_uj;
        if *cost < 0.0 {
            return Err(SimError::Precondition(format!("{}:{} would get a negative cost", c.file, c.line)));
        }
    }
    let change = diff::parse_unified_diff(&diff_text(changes)).map_err(|e| SimError::Invalid(e.to_string()))?;
    let cov_v1 = project.coverage(Version::V1);
    let cov_v2 = project.coverage(Version::V2);
    let selection = pipeline::selection_for(&change, &cov_v1, &cov_v2, &[], false)?;

    let metrics = BTreeSet::from([MetricKind::EnergyPkg, MetricKind::DurationSeconds]);
    let log = if selection.selected.is_empty() {
        MeasurementLog::default()
    } else {
        let probe = ProbeConfig::simulated(metrics.clone(), simulated_spec(project, &project.costs(), &costs_v2));
        let plan = sim_plan(selection.selected.iter().cloned().collect(), reps);
        runner::execute_plan(&plan, &probe, &mut NoopExecutor)?
    };
    let report = pipeline::analyze(&change, &selection, &cov_v1, &cov_v2, &log, &metrics, settings, false)?;
    Ok((report, log))
}

fn simulated_spec(project: &SyntheticProject, v1: &BTreeMap<Pos, f64>, v2: &BTreeMap<Pos, f64>) -> SimulatedProbeSpec {
    let bases = |costs: &BTreeMap<Pos, f64>| -> BTreeMap<TestId, BTreeMap<MetricKind, f64>> {
        project
            .tests
            .iter()
            .map(|t| {
                let e = project.energy(t, costs);
                (
                    t.id.clone(),
                    BTreeMap::from([(MetricKind::EnergyPkg, e), (MetricKind::DurationSeconds, duration_of(e))]),
                )
            })
            .collect()
    };
    let mut spec = SimulatedProbeSpec::new(project.seed, project.noise_rel);
    spec.version_base = BTreeMap::from([(Version::V1, bases(v1)), (Version::V2, bases(v2))]);
    spec
}

fn sim_plan(tests: Vec<TestId>, reps: u32) -> RunPlan {
    let ws = std::env::temp_dir();
    let mut plan = RunPlan::new(tests, ws.clone(), ws, "simulated {test_id}".into());
    plan.repetitions = reps;
    plan.warmup_runs = 0;
    plan.settle_ms = 0;
    plan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub injected_ground_truth: BTreeSet<LineRef>,
    pub detected_breaking: bool,
    pub verdict: Verdict,
    /// Present iff the change was flagged breaking and something was injected.
    pub rank_of_truth: Option<usize>,
    #[serde(serialize_with = "crate::model::finite")]
    pub delta_omega: f64,
    pub per_test_deltas: BTreeMap<TestId, f64>,
    /// The payload line is executed by no test, so no selection can see it.
    pub undetectable: bool,
}

fn outcome(report: &DeltaReport, ground_truth: BTreeSet<LineRef>, undetectable: bool) -> ExperimentOutcome {
    let energy = report.metrics.get(&MetricKind::EnergyPkg);
    let breaking = report.verdict == Verdict::Breaking;
    let rank_of_truth = if breaking && !ground_truth.is_empty() {
        report.ranking.as_ref().and_then(|r| r.best_rank(&ground_truth))
    } else {
        None
    };
    ExperimentOutcome {
        detected_breaking: breaking,
        verdict: report.verdict,
        rank_of_truth,
        delta_omega: energy.map_or(0.0, |m| m.delta_omega),
        per_test_deltas: energy
            .map(|m| m.tests.iter().map(|(t, e)| (t.clone(), e.delta)).collect())
            .unwrap_or_default(),
        injected_ground_truth: ground_truth,
        undetectable,
    }
}

/// Both sides of an in-place edit.
fn edited_line(file: &str, line: u32) -> Result<BTreeSet<LineRef>, SimError> {
    Version::BOTH
        .iter()
        .map(|v| LineRef::new(file, line, *v).map_err(|e| SimError::Invalid(e.to_string())))
        .collect()
}

/// Raises the cost of `target` by `payload_uj` per execution in v2 and
/// checks whether the change is flagged. A zero payload is the identity
/// mutation: the line is edited but costs the same.
pub fn run_rq2_experiment(
    project: &SyntheticProject,
    payload_uj: u64,
    target: &LineRef,
    reps: u32,
) -> Result<ExperimentOutcome, SimError> {
    if !project.has_line(&target.file, target.line) {
        return Err(SimError::Precondition(format!("target {target} is not in the project")));
    }
    let change = LineChange {
        file: target.file.clone(),
        line: target.line,
        cost_delta_uj: payload_uj as f64,
    };
    let (report, _) = simulate_change(project, &[change], reps, &AnalysisSettings::default())?;
    let truth = if payload_uj > 0 {
        edited_line(&target.file, target.line)?
    } else {
        BTreeSet::new()
    };
    let undetectable = project.tests_covering(&target.file, target.line).is_empty();
    Ok(outcome(&report, truth, undetectable))
}

/// Applies benign decoy edits (cost change ≤ 0) together with the payload
/// and ranks the changed lines.
pub fn run_rq3_experiment(
    project: &SyntheticProject,
    decoys: &[LineChange],
    payload_target: &LineRef,
    payload_uj: u64,
    reps: u32,
) -> Result<ExperimentOutcome, SimError> {
    if !project.has_line(&payload_target.file, payload_target.line) {
        return Err(SimError::Precondition(format!("target {payload_target} is not in the project")));
    }
    for d in decoys {
        if d.file == payload_target.file && d.line == payload_target.line {
            return Err(SimError::Precondition(format!("decoy {}:{} is the payload target", d.file, d.line)));
        }
        if d.cost_delta_uj > 0.0 {
            return Err(SimError::Precondition(format!("decoy {}:{} increases cost", d.file, d.line)));
        }
    }
    let mut changes = decoys.to_vec();
    if payload_uj > 0 {
        changes.push(LineChange {
            file: payload_target.file.clone(),
            line: payload_target.line,
            cost_delta_uj: payload_uj as f64,
        });
    }
    let (report, _) = simulate_change(project, &changes, reps, &AnalysisSettings::default())?;
    let truth = if payload_uj > 0 {
        edited_line(&payload_target.file, payload_target.line)?
    } else {
        BTreeSet::new()
    };
    let undetectable = project.tests_covering(&payload_target.file, payload_target.line).is_empty();
    Ok(outcome(&report, truth, undetectable))
}

/// Repeated v1 measurements of every test, summarized per metric.
pub fn run_rq1_stability(
    project: &SyntheticProject,
    reps: u32,
) -> Result<BTreeMap<TestId, BTreeMap<MetricKind, StabilitySummary>>, SimError> {
    if reps < 4 {
        return Err(SimError::Precondition(format!("quartiles need at least 4 repetitions, got {reps}")));
    }
    project.validate()?;
    let costs = project.costs();
    let metrics = [MetricKind::EnergyPkg, MetricKind::DurationSeconds];
    let probe = ProbeConfig::simulated(metrics, simulated_spec(project, &costs, &costs));
    let plan = sim_plan(project.tests.iter().map(|t| t.id.clone()).collect(), reps);
    let log = runner::execute_plan(&plan, &probe, &mut NoopExecutor)?;
    let mut out = BTreeMap::new();
    for t in &project.tests {
        let mut per_metric = BTreeMap::new();
        for m in metrics {
            let xs: Vec<f64> = crate::delta::samples(&log, &t.id, Version::V1, m).into_iter().map(|(_, v)| v).collect();
            per_metric.insert(m, stats::summarize(&xs).map_err(|e| SimError::Invalid(e.to_string()))?);
        }
        out.insert(t.id.clone(), per_metric);
    }
    Ok(out)
}

/// A scenario file: a project and the experiment to run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub project: SyntheticProject,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Rq1 {
        #[serde(default = "default_reps")]
        reps: u32,
    },
    Rq2 {
        target: LineRef,
        payload_uj: u64,
        #[serde(default = "default_reps")]
        reps: u32,
    },
    Rq3 {
        target: LineRef,
        payload_uj: u64,
        decoys: Vec<LineChange>,
        #[serde(default = "default_reps")]
        reps: u32,
    },
}

fn default_reps() -> u32 {
    DEFAULT_REPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioResult {
    Outcome(ExperimentOutcome),
    Stability(BTreeMap<TestId, BTreeMap<MetricKind, StabilitySummary>>),
}

impl Scenario {
    pub fn run(&self) -> Result<ScenarioResult, SimError> {
        self.run_with_payload(None)
    }

    /// Runs the experiment, optionally overriding its payload.
    pub fn run_with_payload(&self, payload: Option<u64>) -> Result<ScenarioResult, SimError> {
        Ok(match &self.experiment {
            Experiment::Rq1 { reps } => ScenarioResult::Stability(run_rq1_stability(&self.project, *reps)?),
            Experiment::Rq2 { target, payload_uj, reps } => ScenarioResult::Outcome(run_rq2_experiment(
                &self.project,
                payload.unwrap_or(*payload_uj),
                target,
                *reps,
            )?),
            Experiment::Rq3 {
                target,
                payload_uj,
                decoys,
                reps,
            } => ScenarioResult::Outcome(run_rq3_experiment(
                &self.project,
                decoys,
                target,
                payload.unwrap_or(*payload_uj),
                *reps,
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub payload_uj: u64,
    pub breaking_rate: f64,
    /// Mean rank of the ground truth over trials where it was ranked.
    pub mean_rank: Option<f64>,
}

/// Runs `trials` noise draws (seeds `seed, seed+1, …`) per payload size.
/// The same draws are reused for every payload.
pub fn sweep(scenario: &Scenario, payloads: &[u64], trials: u32) -> Result<Vec<SweepRow>, SimError> {
    if matches!(scenario.experiment, Experiment::Rq1 { .. }) {
        return Err(SimError::Precondition("a sweep needs an rq2 or rq3 experiment".into()));
    }
    if trials == 0 {
        return Err(SimError::Precondition("a sweep needs at least one trial".into()));
    }
    let mut rows = Vec::new();
    for &p in payloads {
        let mut breaking = 0usize;
        let mut ranks = Vec::new();
        for i in 0..trials {
            let mut s = scenario.clone();
            s.project.seed = scenario.project.seed.wrapping_add(i as u64);
            if let ScenarioResult::Outcome(o) = s.run_with_payload(Some(p))? {
                breaking += o.detected_breaking as usize;
                ranks.extend(o.rank_of_truth);
            }
        }
        rows.push(SweepRow {
            payload_uj: p,
            breaking_rate: breaking as f64 / trials as f64,
            mean_rank: (!ranks.is_empty()).then(|| ranks.iter().sum::<usize>() as f64 / ranks.len() as f64),
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["payload_uj", "breaking_rate", "mean_rank"])?;
    for r in rows {
        w.write_record([
            r.payload_uj.to_string(),
            r.breaking_rate.to_string(),
            r.mean_rank.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Knobs for the scenario generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSettings {
    pub noise_rel: f64,
    /// Payload is at least this multiple of the target's noise amplitude.
    pub payload_noise_ratio: f64,
    pub reps: u32,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings {
            noise_rel: 0.02,
            payload_noise_ratio: 10.0,
            reps: DEFAULT_REPS,
        }
    }
}

fn random_project(g: &mut SplitMix, seed: u64, noise_rel: f64, files: u64, lines_per_file: u64) -> SyntheticProject {
    let mut lines = Vec::new();
    for f in 0..files {
        for l in 1..=lines_per_file {
            lines.push(SyntheticLine {
                file: format!("src/mod{f}.rs"),
                line: l as u32 * 3,
                cost_uj: g.range(1, 50) as f64,
            });
        }
    }
    SyntheticProject {
        lines,
        tests: Vec::new(),
        noise_rel,
        seed,
    }
}

fn pick<'a, T>(g: &mut SplitMix, xs: &'a [T]) -> &'a T {
    &xs[g.range(0, xs.len() as u64 - 1) as usize]
}

/// Payload for `target`: `ratio` times its largest noise amplitude,
/// and never below 5% of the covering tests' energy so zero-noise
/// scenarios still carry a real regression.
fn payload_for(project: &SyntheticProject, target: &LineRef, ratio: f64) -> u64 {
    let costs = project.costs();
    let max_energy = project
        .tests_covering(&target.file, target.line)
        .iter()
        .map(|t| project.energy(t, &costs))
        .fold(0.0, f64::max);
    let noise = project.noise_amplitude(&target.file, target.line);
    (ratio * noise).max(0.05 * max_energy).ceil().max(1.0) as u64
}

/// A random project with one covered target line and an RQ2 experiment
/// whose payload is at least `payload_noise_ratio` noise amplitudes.
pub fn generate_rq2_scenario(seed: u64, settings: &GeneratorSettings) -> Scenario {
    let mut g = SplitMix::new(seed);
    let files = g.range(1, 3);
    let mut project = random_project(&mut g, seed, settings.noise_rel, files, 4);
    let n_tests = g.range(3, 8);
    for i in 0..n_tests {
        let mut coverage: BTreeMap<Pos, u64> = BTreeMap::new();
        for _ in 0..g.range(2, 5) {
            let l = pick(&mut g, &project.lines);
            coverage.insert((l.file.clone(), l.line), g.range(1, 5));
        }
        project.tests.push(SyntheticTest {
            id: TestId::new(format!("t{i:02}")).expect("non-empty"),
            coverage: coverage.into_iter().map(|((file, line), count)| CoverageEntry { file, line, count }).collect(),
            overhead_uj: g.range(100, 1000) as f64,
        });
    }
    let t = pick(&mut g, &project.tests).clone();
    let c = pick(&mut g, &t.coverage).clone();
    let target = LineRef::new(&c.file, c.line, Version::V2).expect("generated path");
    let ratio = settings.payload_noise_ratio * (1.0 + g.next_f64());
    let payload_uj = payload_for(&project, &target, ratio);
    Scenario {
        project,
        experiment: Experiment::Rq2 {
            target,
            payload_uj,
            reps: settings.reps,
        },
    }
}

/// A project where one payload line and 3 to 5 benign decoys are each
/// executed by their own tests. A decoy is either cost-neutral (covered
/// by 4 to 6 tests) or an optimization whose saving exceeds ten noise
/// amplitudes. The payload is raised until the commit is a regression
/// even at the worst noise draw.
pub fn generate_rq3_scenario(seed: u64, settings: &GeneratorSettings) -> Scenario {
    let mut g = SplitMix::new(seed ^ 0x5eed_0003);
    let n_decoys = g.range(3, 5) as usize;
    let mut project = random_project(&mut g, seed, settings.noise_rel, 2, 6);
    let mut order: Vec<usize> = (0..project.lines.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, g.range(0, i as u64) as usize);
    }
    let changed: Vec<usize> = order[..=n_decoys].to_vec();
    let unchanged: Vec<usize> = order[n_decoys + 1..].to_vec();
    let payload_idx = changed[0];

    let mut next_id = 0;
    let mut decoys = Vec::new();
    for (k, &idx) in changed.iter().enumerate() {
        // halving a cost cannot beat ten noise amplitudes once noise reaches 4.5%
        let neutral = k > 0 && (g.range(0, 3) == 0 || 20.0 * settings.noise_rel >= 0.9);
        let n_tests = if neutral { g.range(4, 6) } else { g.range(1, 3) };
        let mut tests_here = Vec::new();
        for _ in 0..n_tests {
            let l = &project.lines[idx];
            let mut coverage = vec![CoverageEntry {
                file: l.file.clone(),
                line: l.line,
                count: g.range(1, 4),
            }];
            for _ in 0..g.range(0, 2) {
                let u = &project.lines[*pick(&mut g, &unchanged)];
                if !coverage.iter().any(|c| c.file == u.file && c.line == u.line) {
                    coverage.push(CoverageEntry {
                        file: u.file.clone(),
                        line: u.line,
                        count: g.range(1, 3),
                    });
                }
            }
            tests_here.push(SyntheticTest {
                id: TestId::new(format!("t{next_id:02}")).expect("non-empty"),
                coverage,
                overhead_uj: g.range(100, 600) as f64,
            });
            next_id += 1;
        }
        project.tests.extend(tests_here);
        if k > 0 && !neutral {
            // make the optimization large against every covering test's noise
            let l = project.lines[idx].clone();
            let costs = project.costs();
            let covering = project.tests_covering(&l.file, l.line);
            let mut needed: f64 = 0.0;
            for t in &covering {
                let exec = t.coverage.iter().find(|c| c.file == l.file && c.line == l.line).map_or(1, |c| c.count) as f64;
                let rest = project.energy(t, &costs) - exec * l.cost_uj;
                // saving s·exec with cost c: s = c/2 must beat 10·noise·(rest + c·exec)
                let nr = settings.noise_rel;
                let c = if nr > 0.0 { 20.0 * nr * rest / (exec * (1.0 - 20.0 * nr)) } else { 0.0 };
                needed = needed.max(c);
            }
            let cost = l.cost_uj.max(needed.ceil() + 1.0);
            project.lines[idx].cost_uj = cost;
            decoys.push(LineChange {
                file: l.file.clone(),
                line: l.line,
                cost_delta_uj: -(cost / 2.0),
            });
        } else if k > 0 {
            let l = &project.lines[idx];
            decoys.push(LineChange {
                file: l.file.clone(),
                line: l.line,
                cost_delta_uj: 0.0,
            });
        }
    }
    // a couple of tests that touch no changed line
    for _ in 0..g.range(0, 2) {
        let u = project.lines[*pick(&mut g, &unchanged)].clone();
        project.tests.push(SyntheticTest {
            id: TestId::new(format!("t{next_id:02}")).expect("non-empty"),
            coverage: vec![CoverageEntry {
                file: u.file,
                line: u.line,
                count: 1,
            }],
            overhead_uj: g.range(100, 600) as f64,
        });
        next_id += 1;
    }

    let pl = &project.lines[payload_idx];
    let target = LineRef::new(&pl.file, pl.line, Version::V2).expect("generated path");
    let mut payload_uj = payload_for(&project, &target, settings.payload_noise_ratio * (1.0 + g.next_f64()));
    while !worst_case_regression(&project, &decoys, &target, payload_uj) {
        payload_uj *= 2;
    }
    Scenario {
        project,
        experiment: Experiment::Rq3 {
            target,
            payload_uj,
            decoys,
            reps: settings.reps,
        },
    }
}

/// True when every v2 draw of the weighted total beats every v1 draw.
fn worst_case_regression(project: &SyntheticProject, decoys: &[LineChange], target: &LineRef, payload: u64) -> bool {
    let mut changes = decoys.to_vec();
    changes.push(LineChange {
        file: target.file.clone(),
        line: target.line,
        cost_delta_uj: payload as f64,
    });
    let Ok(change) = diff::parse_unified_diff(&diff_text(&changes)) else {
        return false;
    };
    let v1 = project.coverage(Version::V1);
    let v2 = project.coverage(Version::V2);
    let Ok(sel) = pipeline::selection_for(&change, &v1, &v2, &[], false) else {
        return false;
    };
    let Ok(weights) = crate::delta::line_weights(&change, &sel, &v1, &v2) else {
        return false;
    };
    let Ok(omega) = crate::delta::test_weights(sel.selected.iter().cloned(), &weights, ExecView::new(&v1, &v2)) else {
        return false;
    };
    let c1 = project.costs();
    let mut c2 = c1.clone();
    for c in &changes {
        *c2.get_mut(&(c.file.clone(), c.line)).expect("known line") += c.cost_delta_uj;
    }
    let nr = project.noise_rel;
    let margin: f64 = project
        .tests
        .iter()
        .filter_map(|t| omega.get(&t.id).map(|w| w * (project.energy(t, &c2) * (1.0 - nr) - project.energy(t, &c1) * (1.0 + nr))))
        .sum();
    margin > 0.0
}
