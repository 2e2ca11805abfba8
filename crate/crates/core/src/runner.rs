//! Repeated, probe-bracketed execution of the selected tests on both
//! versions.
//!
//! Measured executions are strictly sequential: energy counters are
//! machine-global, so a second concurrent subprocess would leak into the
//! reading.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{MeasurementRecord, TestId, Version};
use crate::probes::{self, shell_quote, MeasurementContext, ProbeConfig, ProbeError};

pub const DEFAULT_REPETITIONS: u32 = 10;
pub const DEFAULT_WARMUP: u32 = 2;
pub const DEFAULT_SETTLE_MS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interleaving {
    /// All v1 executions, then all v2 executions.
    BlockPerVersion,
    /// v1 then v2 back to back for each test and iteration.
    #[default]
    AlternatingPairs,
}

impl std::str::FromStr for Interleaving {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "block" | "block_per_version" => Ok(Interleaving::BlockPerVersion),
            "alternating" | "alternating_pairs" => Ok(Interleaving::AlternatingPairs),
            other => Err(format!("unknown interleaving `{other}` (block or alternating)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub tests: Vec<TestId>,
    pub repetitions: u32,
    pub workspace_v1: PathBuf,
    pub workspace_v2: PathBuf,
    /// Shell command; `{test_id}` and `{workspace}` are substituted.
    pub command_template: String,
    #[serde(default)]
    pub warmup_runs: u32,
    #[serde(default)]
    pub interleaving: Interleaving,
    #[serde(default)]
    pub settle_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
}

impl RunPlan {
    pub fn new(tests: Vec<TestId>, workspace_v1: PathBuf, workspace_v2: PathBuf, command_template: String) -> Self {
        RunPlan {
            tests,
            repetitions: DEFAULT_REPETITIONS,
            workspace_v1,
            workspace_v2,
            command_template,
            warmup_runs: DEFAULT_WARMUP,
            interleaving: Interleaving::default(),
            settle_ms: DEFAULT_SETTLE_MS,
            timeout_ms: None,
        }
    }

    pub fn workspace(&self, version: Version) -> &Path {
        match version {
            Version::V1 => &self.workspace_v1,
            Version::V2 => &self.workspace_v2,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.repetitions == 0 {
            return Err(RunError::PlanInvalid("repetitions must be >= 1".into()));
        }
        if !self.command_template.contains("{test_id}") {
            return Err(RunError::PlanInvalid("command template must contain {test_id}".into()));
        }
        let unique: BTreeSet<&TestId> = self.tests.iter().collect();
        if unique.len() != self.tests.len() {
            return Err(RunError::PlanInvalid("duplicate test ids in plan".into()));
        }
        for v in Version::BOTH {
            if !self.workspace(v).is_dir() {
                return Err(RunError::PlanInvalid(format!(
                    "{v} workspace {} does not exist",
                    self.workspace(v).display()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the plan.
    pub fn digest(&self) -> String {
        let json = crate::model::to_canonical_json(self).expect("plans always serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Execution order, warmups first.
    pub fn schedule(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        let reps = self.repetitions;
        let w = self.warmup_runs;
        match self.interleaving {
            Interleaving::AlternatingPairs => {
                for (warmup, range) in [(true, 0..w), (false, 0..reps)] {
                    for i in range {
                        for t in &self.tests {
                            for v in Version::BOTH {
                                out.push(Slot::new(t, v, i, warmup, w));
                            }
                        }
                    }
                }
            }
            Interleaving::BlockPerVersion => {
                for v in Version::BOTH {
                    for (warmup, range) in [(true, 0..w), (false, 0..reps)] {
                        for i in range {
                            for t in &self.tests {
                                out.push(Slot::new(t, v, i, warmup, w));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub test: TestId,
    pub version: Version,
    /// Iteration among measured runs, or among warmups for warmup slots.
    pub iteration: u32,
    pub warmup: bool,
    /// Position among all executions of this (test, version).
    pub run_index: u64,
}

impl Slot {
    fn new(test: &TestId, version: Version, iteration: u32, warmup: bool, warmups: u32) -> Self {
        let run_index = if warmup { iteration as u64 } else { warmups as u64 + iteration as u64 };
        Slot {
            test: test.clone(),
            version,
            iteration,
            warmup,
            run_index,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run plan: {0}")]
    PlanInvalid(String),
    #[error("test {test} failed on {version} with exit code {exit_code}")]
    TestFailure { test: TestId, version: Version, exit_code: i32 },
    #[error("test {test} on {version} exceeded the {timeout_ms} ms timeout")]
    Timeout { test: TestId, version: Version, timeout_ms: u64 },
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Runs one test once. Returns the exit code (signals map to -1).
pub trait TestExecutor {
    fn run(&mut self, test: &TestId, version: Version, prefix: Option<&str>) -> Result<i32, RunError>;
}

/// Runs the command template in the version's workspace via `sh -c`.
#[derive(Debug, Clone)]
pub struct CommandExecutor {
    template: String,
    workspaces: BTreeMap<Version, PathBuf>,
    /// Shell snippets run before the test command, inside the measured bracket.
    pre_commands: BTreeMap<(TestId, Version), String>,
    timeout: Option<Duration>,
}

impl CommandExecutor {
    pub fn from_plan(plan: &RunPlan) -> Self {
        CommandExecutor {
            template: plan.command_template.clone(),
            workspaces: Version::BOTH.iter().map(|v| (*v, plan.workspace(*v).to_path_buf())).collect(),
            pre_commands: BTreeMap::new(),
            timeout: plan.timeout_ms.map(Duration::from_millis),
        }
    }

    pub fn with_pre_command(mut self, test: TestId, version: Version, snippet: String) -> Self {
        self.pre_commands.insert((test, version), snippet);
        self
    }

    /// The shell line executed for (test, version).
    pub fn command_line(&self, test: &TestId, version: Version, prefix: Option<&str>) -> String {
        let ws = self.workspaces[&version].to_string_lossy().into_owned();
        let mut cmd = self.template.replace("{test_id}", test.as_str()).replace("{workspace}", &ws);
        if let Some(pre) = self.pre_commands.get(&(test.clone(), version)) {
            cmd = format!("{pre}; {cmd}");
        }
        match prefix {
            Some(p) => format!("{p} sh -c {}", shell_quote(&cmd)),
            None => cmd,
        }
    }
}

impl TestExecutor for CommandExecutor {
    fn run(&mut self, test: &TestId, version: Version, prefix: Option<&str>) -> Result<i32, RunError> {
        let line = self.command_line(test, version, prefix);
        log::debug!("[{version}] {line}");
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&line)
            .current_dir(&self.workspaces[&version])
            .env("JOULEDIFF_TEST_ID", test.as_str())
            .env("JOULEDIFF_VERSION", version.as_str())
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| RunError::Io(format!("spawning `{line}`: {e}")))?;
        let status = match self.timeout {
            None => child.wait().map_err(|e| RunError::Io(e.to_string()))?,
            Some(limit) => {
                let started = Instant::now();
                loop {
                    if let Some(status) = child.try_wait().map_err(|e| RunError::Io(e.to_string()))? {
                        break status;
                    }
                    if started.elapsed() > limit {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(RunError::Timeout {
                            test: test.clone(),
                            version,
                            timeout_ms: limit.as_millis() as u64,
                        });
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
            }
        };
        Ok(status.code().unwrap_or(-1))
    }
}

/// Executor that does nothing and always succeeds; measurements then come
/// entirely from a simulated probe.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopExecutor;

impl TestExecutor for NoopExecutor {
    fn run(&mut self, _: &TestId, _: Version, _: Option<&str>) -> Result<i32, RunError> {
        Ok(0)
    }
}

/// Runs every test once per version without probes; any non-zero exit
/// aborts.
pub fn preflight(plan: &RunPlan, executor: &mut dyn TestExecutor) -> Result<(), RunError> {
    plan.validate()?;
    for v in Version::BOTH {
        for t in &plan.tests {
            let code = executor.run(t, v, None)?;
            if code != 0 {
                return Err(RunError::TestFailure {
                    test: t.clone(),
                    version: v,
                    exit_code: code,
                });
            }
        }
    }
    Ok(())
}

/// Pre-flight, then the full measured schedule. Warmup readings are
/// discarded.
pub fn execute_plan(
    plan: &RunPlan,
    probe_config: &ProbeConfig,
    executor: &mut dyn TestExecutor,
) -> Result<MeasurementLog, RunError> {
    plan.validate()?;
    probe_config.validate()?;
    preflight(plan, executor)?;

    let settle = Duration::from_millis(plan.settle_ms);
    let mut log = MeasurementLog {
        records: Vec::with_capacity(plan.tests.len() * plan.repetitions as usize * 2),
        plan_digest: Some(plan.digest()),
    };
    for (n, slot) in plan.schedule().into_iter().enumerate() {
        if n > 0 && !settle.is_zero() {
            std::thread::sleep(settle);
        }
        let ctx = MeasurementContext::new(slot.test.clone(), slot.version, slot.run_index);
        let session = probes::start_probe(probe_config, &ctx)?;
        let probe_id = session.probe_id().to_owned();
        let prefix = session.command_prefix().map(str::to_owned);
        let outcome = executor.run(&slot.test, slot.version, prefix.as_deref());
        let values = probes::stop_probe(session);
        let code = outcome?;
        if code != 0 {
            return Err(RunError::TestFailure {
                test: slot.test,
                version: slot.version,
                exit_code: code,
            });
        }
        let values = values?;
        if slot.warmup {
            continue;
        }
        let record = MeasurementRecord {
            test: slot.test,
            version: slot.version,
            iteration: slot.iteration,
            values,
            probe_id,
        };
        record.validate().map_err(|e| RunError::Probe(ProbeError::Read(e.to_string())))?;
        log.records.push(record);
    }
    Ok(log)
}

/// Append-only list of measurement records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementLog {
    pub records: Vec<MeasurementRecord>,
    pub plan_digest: Option<String>,
}

impl MeasurementLog {
    /// Checks record count and (test, version, iteration) uniqueness
    /// against `plan`.
    pub fn check_complete(&self, plan: &RunPlan) -> Result<(), String> {
        let expected = plan.tests.len() * plan.repetitions as usize * 2;
        if self.records.len() != expected {
            return Err(format!("expected {expected} records, found {}", self.records.len()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.iteration >= plan.repetitions {
                return Err(format!("iteration {} out of range for {}", r.iteration, r.test));
            }
            if !seen.insert((&r.test, r.version, r.iteration)) {
                return Err(format!("duplicate record for {} {} iteration {}", r.test, r.version, r.iteration));
            }
        }
        Ok(())
    }

    pub fn tests(&self) -> BTreeSet<TestId> {
        self.records.iter().map(|r| r.test.clone()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&crate::model::to_canonical_json(r).expect("records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RunError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: MeasurementRecord =
                serde_json::from_str(line).map_err(|e| RunError::Io(format!("log line {}: {e}", i + 1)))?;
            r.validate().map_err(|e| RunError::Io(format!("log line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(MeasurementLog {
            records,
            plan_digest: None,
        })
    }

    /// Writes the JSON Lines log, plus the plan digest to `<path>.digest`.
    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", path.display()));
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        if let Some(d) = &self.plan_digest {
            fs::write(digest_path(path), format!("{d}\n")).map_err(io)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", path.display()));
        let mut text = String::new();
        for line in BufReader::new(fs::File::open(path).map_err(io)?).lines() {
            text.push_str(&line.map_err(io)?);
            text.push('\n');
        }
        let mut log = Self::from_jsonl(&text)?;
        log.plan_digest = fs::read_to_string(digest_path(path)).ok().map(|s| s.trim().to_owned());
        Ok(log)
    }
}

fn digest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".digest");
    PathBuf::from(p)
}
