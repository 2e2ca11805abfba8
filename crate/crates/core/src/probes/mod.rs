//! Measurement backends. A [`ProbeSession`] brackets exactly one test
//! execution: [`start_probe`] samples baselines as its last action and
//! [`stop_probe`] reads counters as its first.
//!
//! Energy comes from powercap counters, counters from perf, duration from
//! the monotonic clock. The simulated backend replaces all of them with
//! deterministic values for desk-scale experiments.

pub mod perf;
pub mod powercap;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{MetricKind, TestId, Version};
use crate::rng;
use powercap::{discover_zones, ZoneTracker};

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("probe unavailable for {metric}: {reason}")]
    Unavailable { metric: MetricKind, reason: String },
    #[error("probe read failed: {0}")]
    Read(String),
    #[error("invalid probe configuration: {0}")]
    InvalidConfig(String),
    #[error("another hardware measurement holds the probe lock {0}")]
    Busy(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PerfAdapter {
    OsPerfInterface,
    ExternalPerfCommand {
        #[serde(default = "default_perf_template")]
        template: String,
    },
    #[default]
    Disabled,
}

fn default_perf_template() -> String {
    perf::DEFAULT_PERF_TEMPLATE.to_owned()
}

/// Deterministic probe: each (test, version) has base values, perturbed by
/// multiplicative uniform noise `value·(1+u)`, `u ~ U(−noise_rel, noise_rel)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedProbeSpec {
    pub seed: u64,
    #[serde(default)]
    pub per_test_base: BTreeMap<TestId, BTreeMap<MetricKind, f64>>,
    #[serde(default)]
    pub noise_rel: f64,
    /// Version-specific bases overriding `per_test_base` (same shape).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub version_base: BTreeMap<Version, BTreeMap<TestId, BTreeMap<MetricKind, f64>>>,
    /// Amount the energy counter advances per live read.
    #[serde(default = "default_quantum")]
    pub energy_quantum_uj: u64,
}

fn default_quantum() -> u64 {
    1
}

impl SimulatedProbeSpec {
    pub fn new(seed: u64, noise_rel: f64) -> Self {
        SimulatedProbeSpec {
            seed,
            per_test_base: BTreeMap::new(),
            noise_rel,
            version_base: BTreeMap::new(),
            energy_quantum_uj: default_quantum(),
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(0.0..1.0).contains(&self.noise_rel) {
            return Err(ProbeError::InvalidConfig(format!("noise_rel must be in [0, 1), got {}", self.noise_rel)));
        }
        let all = self.per_test_base.iter().chain(self.version_base.values().flat_map(|m| m.iter()));
        for (test, values) in all {
            for (metric, v) in values {
                if !v.is_finite() || *v < 0.0 {
                    return Err(ProbeError::InvalidConfig(format!("base {metric} of {test} must be finite and >= 0")));
                }
            }
        }
        Ok(())
    }

    pub fn base(&self, test: &TestId, version: Version, metric: MetricKind) -> Option<f64> {
        self.version_base
            .get(&version)
            .and_then(|m| m.get(test))
            .and_then(|m| m.get(&metric))
            .or_else(|| self.per_test_base.get(test).and_then(|m| m.get(&metric)))
            .copied()
    }

    /// The noisy value for one execution; identical inputs give identical output.
    pub fn sample(&self, ctx: &MeasurementContext, test: &TestId, metric: MetricKind) -> Option<f64> {
        let base = self.base(test, ctx.version, metric)?;
        if self.noise_rel == 0.0 {
            return Some(base);
        }
        let word = rng::keyed(
            self.seed,
            &[
                rng::fnv1a(test.as_str().as_bytes()),
                ctx.version as u64,
                ctx.run_index,
                rng::fnv1a(metric.as_str().as_bytes()),
            ],
        );
        let u = self.noise_rel * (2.0 * rng::unit_f64(word) - 1.0);
        Some(base * (1.0 + u))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub enabled_metrics: BTreeSet<MetricKind>,
    #[serde(default = "default_powercap_root")]
    pub powercap_root: PathBuf,
    #[serde(default)]
    pub perf_adapter: PerfAdapter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated: Option<SimulatedProbeSpec>,
    /// Advisory lock serializing hardware measurements machine-wide.
    #[serde(default = "default_lock_path")]
    pub lock_path: PathBuf,
}

fn default_powercap_root() -> PathBuf {
    PathBuf::from(powercap::DEFAULT_POWERCAP_ROOT)
}

fn default_lock_path() -> PathBuf {
    std::env::temp_dir().join("joulediff-probe.lock")
}

impl ProbeConfig {
    pub fn new(metrics: impl IntoIterator<Item = MetricKind>) -> Self {
        ProbeConfig {
            enabled_metrics: metrics.into_iter().collect(),
            powercap_root: default_powercap_root(),
            perf_adapter: PerfAdapter::Disabled,
            simulated: None,
            lock_path: default_lock_path(),
        }
    }

    pub fn simulated(metrics: impl IntoIterator<Item = MetricKind>, spec: SimulatedProbeSpec) -> Self {
        ProbeConfig {
            simulated: Some(spec),
            ..ProbeConfig::new(metrics)
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.enabled_metrics.is_empty() {
            return Err(ProbeError::InvalidConfig("no metric enabled".into()));
        }
        if let Some(sim) = &self.simulated {
            sim.validate()?;
        }
        Ok(())
    }

    pub fn probe_id(&self) -> String {
        if let Some(sim) = &self.simulated {
            return format!("simulated:seed={}", sim.seed);
        }
        let mut parts = Vec::new();
        if self.enabled_metrics.iter().any(|m| m.is_energy()) {
            parts.push(format!("powercap:{}", self.powercap_root.display()));
        }
        if self.enabled_metrics.iter().any(|m| m.is_counter()) {
            parts.push(match &self.perf_adapter {
                PerfAdapter::OsPerfInterface => "perf_event".to_owned(),
                PerfAdapter::ExternalPerfCommand { .. } => "perf-cmd".to_owned(),
                PerfAdapter::Disabled => "perf-disabled".to_owned(),
            });
        }
        if self.enabled_metrics.contains(&MetricKind::DurationSeconds) {
            parts.push("clock".to_owned());
        }
        parts.join("+")
    }

    fn needs_lock(&self) -> bool {
        self.simulated.is_none() && self.enabled_metrics.iter().any(|m| m.is_energy() || m.is_counter())
    }
}

/// What is being measured. `run_index` distinguishes executions of the
/// same (test, version) pair, warmups included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementContext {
    pub test: Option<TestId>,
    pub version: Version,
    pub run_index: u64,
}

impl MeasurementContext {
    pub fn new(test: TestId, version: Version, run_index: u64) -> Self {
        MeasurementContext {
            test: Some(test),
            version,
            run_index,
        }
    }

    /// A context not tied to a test, e.g. a standalone energy burn.
    pub fn detached() -> Self {
        MeasurementContext {
            test: None,
            version: Version::V1,
            run_index: 0,
        }
    }
}

/// Exclusive `flock(2)` on the lock file, released on drop.
struct ProbeLock {
    _file: File,
}

impl ProbeLock {
    fn acquire(path: &Path) -> Result<Self, ProbeError> {
        use std::os::fd::AsRawFd;
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(|e| ProbeError::InvalidConfig(format!("cannot open lock file {}: {e}", path.display())))?;
        // SAFETY: flock on a descriptor we own
        let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
        if rc != 0 {
            return Err(ProbeError::Busy(path.to_path_buf()));
        }
        Ok(ProbeLock { _file: file })
    }
}

enum Backend {
    Simulated {
        spec: SimulatedProbeSpec,
        energy_reads: u64,
    },
    Hardware {
        packages: Vec<ZoneTracker>,
        dram: Vec<ZoneTracker>,
        #[cfg(target_os = "linux")]
        os_perf: Option<perf::os::CounterGroup>,
        perf_output: Option<PathBuf>,
        perf_prefix: Option<String>,
        _lock: Option<ProbeLock>,
    },
}

/// An active measurement bracket.
pub struct ProbeSession {
    metrics: BTreeSet<MetricKind>,
    ctx: MeasurementContext,
    backend: Backend,
    probe_id: String,
    started: Instant,
}

static PERF_OUTPUT_SEQ: AtomicU64 = AtomicU64::new(0);

/// Opens a measurement bracket. Fails with [`ProbeError::Unavailable`]
/// naming the first metric that cannot be served.
pub fn start_probe(config: &ProbeConfig, ctx: &MeasurementContext) -> Result<ProbeSession, ProbeError> {
    config.validate()?;
    let metrics = config.enabled_metrics.clone();

    if let Some(spec) = &config.simulated {
        if let Some(test) = &ctx.test {
            for &m in &metrics {
                if spec.base(test, ctx.version, m).is_none() {
                    return Err(ProbeError::Unavailable {
                        metric: m,
                        reason: format!("simulated probe has no base value for {test} on {}", ctx.version),
                    });
                }
            }
        }
        return Ok(ProbeSession {
            metrics,
            ctx: ctx.clone(),
            backend: Backend::Simulated {
                spec: spec.clone(),
                energy_reads: 0,
            },
            probe_id: config.probe_id(),
            started: Instant::now(),
        });
    }

    let lock = if config.needs_lock() {
        Some(ProbeLock::acquire(&config.lock_path)?)
    } else {
        None
    };

    let wants = |m: MetricKind| metrics.contains(&m);
    let zones = if wants(MetricKind::EnergyPkg) || wants(MetricKind::EnergyDram) {
        if !config.powercap_root.is_dir() {
            let metric = if wants(MetricKind::EnergyPkg) { MetricKind::EnergyPkg } else { MetricKind::EnergyDram };
            return Err(ProbeError::Unavailable {
                metric,
                reason: format!("powercap root {} not readable", config.powercap_root.display()),
            });
        }
        discover_zones(&config.powercap_root)?
    } else {
        Vec::new()
    };
    for (metric, domain) in [
        (MetricKind::EnergyPkg, powercap::EnergyDomain::Package),
        (MetricKind::EnergyDram, powercap::EnergyDomain::Dram),
    ] {
        if wants(metric) && !zones.iter().any(|z| z.domain == domain) {
            return Err(ProbeError::Unavailable {
                metric,
                reason: format!("no {domain:?} zone below {}", config.powercap_root.display()),
            });
        }
    }

    let counters: Vec<MetricKind> = metrics.iter().copied().filter(|m| m.is_counter()).collect();
    let mut perf_output = None;
    let mut perf_prefix = None;
    #[cfg(target_os = "linux")]
    let mut os_perf_metrics: Vec<MetricKind> = Vec::new();
    if !counters.is_empty() {
        match &config.perf_adapter {
            PerfAdapter::Disabled => {
                return Err(ProbeError::Unavailable {
                    metric: counters[0],
                    reason: "performance counters requested but the perf adapter is disabled".into(),
                })
            }
            PerfAdapter::ExternalPerfCommand { template } => {
                let out = std::env::temp_dir().join(format!(
                    "joulediff-perf-{}-{}.csv",
                    std::process::id(),
                    PERF_OUTPUT_SEQ.fetch_add(1, Ordering::Relaxed)
                ));
                let events: Vec<&str> = counters.iter().filter_map(|m| perf::event_name(*m)).collect();
                perf_prefix = Some(
                    template
                        .replace("{output}", &shell_quote(&out.to_string_lossy()))
                        .replace("{events}", &events.join(",")),
                );
                let _ = std::fs::remove_file(&out);
                perf_output = Some(out);
            }
            PerfAdapter::OsPerfInterface => {
                #[cfg(target_os = "linux")]
                {
                    os_perf_metrics = counters.clone();
                }
                #[cfg(not(target_os = "linux"))]
                return Err(ProbeError::Unavailable {
                    metric: counters[0],
                    reason: "perf_event_open is only available on Linux".into(),
                });
            }
        }
    }

    // baselines last: counters, then energy, then the clock
    #[cfg(target_os = "linux")]
    let os_perf = if os_perf_metrics.is_empty() {
        None
    } else {
        Some(perf::os::CounterGroup::open(&os_perf_metrics).map_err(|(metric, e)| ProbeError::Unavailable {
            metric,
            reason: format!("perf_event_open: {e}"),
        })?)
    };
    let mut packages = Vec::new();
    let mut dram = Vec::new();
    for z in zones {
        match z.domain {
            powercap::EnergyDomain::Package if wants(MetricKind::EnergyPkg) => packages.push(ZoneTracker::start(z)?),
            powercap::EnergyDomain::Dram if wants(MetricKind::EnergyDram) => dram.push(ZoneTracker::start(z)?),
            _ => {}
        }
    }
    Ok(ProbeSession {
        metrics,
        ctx: ctx.clone(),
        backend: Backend::Hardware {
            packages,
            dram,
            #[cfg(target_os = "linux")]
            os_perf,
            perf_output,
            perf_prefix,
            _lock: lock,
        },
        probe_id: config.probe_id(),
        started: Instant::now(),
    })
}

/// Closes the bracket and returns end − start for every enabled metric.
pub fn stop_probe(session: ProbeSession) -> Result<BTreeMap<MetricKind, f64>, ProbeError> {
    let elapsed = session.started.elapsed().as_secs_f64();
    let mut out = BTreeMap::new();
    match session.backend {
        Backend::Simulated { ref spec, .. } => {
            let test = session
                .ctx
                .test
                .as_ref()
                .ok_or_else(|| ProbeError::Read("simulated probe stopped without a test context".into()))?;
            for &m in &session.metrics {
                let v = spec
                    .sample(&session.ctx, test, m)
                    .ok_or_else(|| ProbeError::Read(format!("no simulated value for {test} {m}")))?;
                out.insert(m, v);
            }
        }
        Backend::Hardware {
            mut packages,
            mut dram,
            #[cfg(target_os = "linux")]
            os_perf,
            perf_output,
            ..
        } => {
            #[cfg(target_os = "linux")]
            if let Some(group) = &os_perf {
                let deltas = group.read_deltas().map_err(|e| ProbeError::Read(format!("perf counter read: {e}")))?;
                out.extend(deltas);
            }
            if session.metrics.contains(&MetricKind::EnergyPkg) {
                out.insert(MetricKind::EnergyPkg, sum_advance(&mut packages)? as f64);
            }
            if session.metrics.contains(&MetricKind::EnergyDram) {
                out.insert(MetricKind::EnergyDram, sum_advance(&mut dram)? as f64);
            }
            if session.metrics.contains(&MetricKind::DurationSeconds) {
                out.insert(MetricKind::DurationSeconds, elapsed);
            }
            if let Some(path) = perf_output {
                let parsed = perf::read_perf_output(&path);
                let _ = std::fs::remove_file(&path);
                for (m, v) in parsed? {
                    if session.metrics.contains(&m) {
                        out.insert(m, v);
                    }
                }
            }
        }
    }
    for m in &session.metrics {
        if !out.contains_key(m) {
            return Err(ProbeError::Read(format!("no value produced for enabled metric {m}")));
        }
    }
    Ok(out)
}

fn sum_advance(trackers: &mut [ZoneTracker]) -> Result<u64, ProbeError> {
    trackers.iter_mut().map(|t| t.advance()).sum()
}

impl ProbeSession {
    pub fn probe_id(&self) -> &str {
        &self.probe_id
    }

    pub fn context(&self) -> &MeasurementContext {
        &self.ctx
    }

    /// Shell prefix the measured command must be run under, for adapters
    /// that wrap the command (external perf).
    pub fn command_prefix(&self) -> Option<&str> {
        match &self.backend {
            Backend::Hardware { perf_prefix, .. } => perf_prefix.as_deref(),
            Backend::Simulated { .. } => None,
        }
    }

    /// Energy reading at session start, in microjoules.
    pub fn baseline_energy(&self) -> u64 {
        match &self.backend {
            Backend::Simulated { .. } => 0,
            Backend::Hardware { packages, .. } => packages.iter().map(|t| t.baseline_uj).sum(),
        }
    }

    /// Current package energy in microjoules: baseline plus wrap-corrected
    /// consumption so far. Never decreases within a session.
    pub fn read_current_energy(&mut self) -> Result<u64, ProbeError> {
        match &mut self.backend {
            Backend::Simulated { spec, energy_reads } => {
                if spec.energy_quantum_uj == 0 {
                    return Err(ProbeError::Unavailable {
                        metric: MetricKind::EnergyPkg,
                        reason: "simulated energy quantum is zero".into(),
                    });
                }
                *energy_reads += 1;
                Ok(*energy_reads * spec.energy_quantum_uj)
            }
            Backend::Hardware { packages, .. } => {
                if packages.is_empty() {
                    return Err(ProbeError::Unavailable {
                        metric: MetricKind::EnergyPkg,
                        reason: "session does not monitor package energy".into(),
                    });
                }
                let consumed = sum_advance(packages)?;
                Ok(packages.iter().map(|t| t.baseline_uj).sum::<u64>() + consumed)
            }
        }
    }

    /// Ends the bracket without producing a measurement.
    pub fn close(self) {}
}

/// Single-quotes `s` for POSIX shells.
pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}
