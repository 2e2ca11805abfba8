//! Energy-consumption mutations.
//!
//! [`consume_energy`] burns a fixed energy payload: it starts monitoring,
//! sets the threshold `T = start + payload`, seeds `random`, and keeps
//! replacing `random` with `R(random)` until the package energy reaches
//! `T`. `R` is [`rng::mix64`], so under a fixed seed the whole chain is
//! reproducible and the final value depends on every iteration.
//!
//! A [`MutationPlan`] injects that burn into the measured command of every
//! test executing a target, and records the targets as ground truth for
//! localization scoring.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::model::{CoverageMap, LineRef, TestId, Version};
use crate::probes::{self, shell_quote, MeasurementContext, ProbeConfig, ProbeError, ProbeSession};
use crate::rng;
use crate::runner::CommandExecutor;
use crate::select::TestSelection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    WallClock,
    FixedSeed(u64),
}

impl Default for SeedSource {
    fn default() -> Self {
        SeedSource::FixedSeed(0)
    }
}

impl SeedSource {
    pub fn resolve(self) -> u64 {
        match self {
            SeedSource::FixedSeed(s) => s,
            SeedSource::WallClock => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurnResult {
    pub consumed_uj: u64,
    /// Applications of `R`, including the seeding one.
    pub iterations: u64,
    pub final_random: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BurnError {
    #[error("energy payload must be positive")]
    ZeroPayload,
    #[error("check interval must be positive")]
    ZeroCheckInterval,
    #[error("probe failed after {consumed_so_far_uj} uJ: {source}")]
    Probe {
        consumed_so_far_uj: u64,
        #[source]
        source: ProbeError,
    },
}

/// Burns at least `payload_uj` microjoules on an already started session,
/// reading the counter every `check_every` applications of `R`.
pub fn burn(session: &mut ProbeSession, payload_uj: u64, seed: u64, check_every: u64) -> Result<BurnResult, BurnError> {
    if payload_uj == 0 {
        return Err(BurnError::ZeroPayload);
    }
    if check_every == 0 {
        return Err(BurnError::ZeroCheckInterval);
    }
    let start = session.baseline_energy();
    let threshold = start + payload_uj;
    let mut random = rng::mix64(seed);
    let mut iterations = 1u64;
    let mut current = start;
    loop {
        current = session.read_current_energy().map_err(|source| BurnError::Probe {
            consumed_so_far_uj: current - start,
            source,
        })?;
        if current >= threshold {
            break;
        }
        for _ in 0..check_every {
            random = rng::mix64(random);
            iterations += 1;
        }
        std::hint::black_box(random);
    }
    Ok(BurnResult {
        consumed_uj: current - start,
        iterations,
        final_random: random,
    })
}

/// Starts monitoring, burns the payload and stops monitoring.
pub fn consume_energy(
    probe: &ProbeConfig,
    payload_uj: u64,
    seed: SeedSource,
    check_every: u64,
) -> Result<BurnResult, BurnError> {
    if payload_uj == 0 {
        return Err(BurnError::ZeroPayload);
    }
    let mut session = probes::start_probe(probe, &MeasurementContext::detached()).map_err(|source| BurnError::Probe {
        consumed_so_far_uj: 0,
        source,
    })?;
    let result = burn(&mut session, payload_uj, seed.resolve(), check_every);
    session.close();
    result
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationTargets {
    Lines(BTreeSet<LineRef>),
    Tests(BTreeSet<TestId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationSpec {
    pub payload_uj: u64,
    pub targets: MutationTargets,
    #[serde(default)]
    pub seed_source: SeedSource,
    #[serde(default = "one")]
    pub check_every: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MutationError {
    #[error("energy payload must be positive")]
    ZeroPayload,
    #[error("mutation has no targets")]
    NoTargets,
    #[error("unresolvable mutation targets: {}", .0.join(", "))]
    TargetUnresolvable(Vec<String>),
}

/// Which tests burn the payload, and which lines are the ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationPlan {
    pub payload_uj: u64,
    pub seed: u64,
    pub check_every: u64,
    pub wrapped_tests: BTreeSet<TestId>,
    pub ground_truth_lines: BTreeSet<LineRef>,
}

pub fn plan_mutation(
    spec: &MutationSpec,
    selection: &TestSelection,
    cov_v1: &CoverageMap,
    cov_v2: &CoverageMap,
) -> Result<MutationPlan, MutationError> {
    if spec.payload_uj == 0 {
        return Err(MutationError::ZeroPayload);
    }
    let mut unresolved = Vec::new();
    let mut wrapped = BTreeSet::new();
    let mut ground_truth = BTreeSet::new();
    match &spec.targets {
        MutationTargets::Tests(tests) => {
            if tests.is_empty() {
                return Err(MutationError::NoTargets);
            }
            for t in tests {
                if selection.selected.contains(t) {
                    wrapped.insert(t.clone());
                } else {
                    unresolved.push(format!("test {t} is not selected"));
                }
            }
        }
        MutationTargets::Lines(lines) => {
            if lines.is_empty() {
                return Err(MutationError::NoTargets);
            }
            for l in lines {
                let cov = match l.version {
                    Version::V1 => cov_v1,
                    Version::V2 => cov_v2,
                };
                let covering: Vec<TestId> = cov
                    .tests_covering(&l.file, l.line)
                    .filter(|t| selection.selected.contains(*t))
                    .cloned()
                    .collect();
                if covering.is_empty() {
                    unresolved.push(format!("line {l} is executed by no selected test"));
                } else {
                    wrapped.extend(covering);
                    ground_truth.insert(l.clone());
                }
            }
        }
    }
    if !unresolved.is_empty() {
        return Err(MutationError::TargetUnresolvable(unresolved));
    }
    Ok(MutationPlan {
        payload_uj: spec.payload_uj,
        seed: spec.seed_source.resolve(),
        check_every: spec.check_every.max(1),
        wrapped_tests: wrapped,
        ground_truth_lines: ground_truth,
    })
}

impl MutationPlan {
    /// Shell snippet burning the payload via the `burn` subcommand of
    /// `program`; `extra_args` carries probe options such as
    /// `--powercap-root`.
    pub fn burn_command(&self, program: &str, extra_args: &[String]) -> String {
        let mut cmd = format!(
            "{} burn --payload-uj {} --seed {} --check-every {}",
            shell_quote(program),
            self.payload_uj,
            self.seed,
            self.check_every
        );
        for a in extra_args {
            cmd.push(' ');
            cmd.push_str(&shell_quote(a));
        }
        cmd.push_str(" >/dev/null");
        cmd
    }

    /// Injects the burn into the v2 command of every wrapped test.
    pub fn apply(&self, executor: CommandExecutor, burn_command: &str) -> CommandExecutor {
        self.wrapped_tests.iter().fold(executor, |ex, t| {
            ex.with_pre_command(t.clone(), Version::V2, burn_command.to_owned())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MetricKind;
    use crate::probes::SimulatedProbeSpec;

    fn t(s: &str) -> TestId {
        TestId::new(s).unwrap()
    }

    fn sim_probe(quantum: u64) -> ProbeConfig {
        let mut spec = SimulatedProbeSpec::new(0, 0.0);
        spec.energy_quantum_uj = quantum;
        ProbeConfig::simulated([MetricKind::EnergyPkg], spec)
    }

    #[test]
    fn stepping_the_simulated_counter() {
        // reads 10, 20, 30 are below T = 35, the read of 40 ends the loop
        let r = consume_energy(&sim_probe(10), 35, SeedSource::FixedSeed(9), 1).unwrap();
        assert_eq!((r.consumed_uj, r.iterations), (40, 4));
    }

    #[test]
    fn exact_payload_and_tiny_payload() {
        let r = consume_energy(&sim_probe(10), 30, SeedSource::FixedSeed(1), 1).unwrap();
        assert_eq!((r.consumed_uj, r.iterations), (30, 3));
        let r = consume_energy(&sim_probe(10), 1, SeedSource::FixedSeed(1), 1).unwrap();
        assert_eq!((r.consumed_uj, r.iterations), (10, 1));
    }

    #[test]
    fn zero_payload_rejected() {
        assert!(matches!(
            consume_energy(&sim_probe(10), 0, SeedSource::FixedSeed(1), 1),
            Err(BurnError::ZeroPayload)
        ));
    }

    #[test]
    fn fixed_seed_is_deterministic_and_chained() {
        let a = consume_energy(&sim_probe(7), 100, SeedSource::FixedSeed(123), 1).unwrap();
        let b = consume_energy(&sim_probe(7), 100, SeedSource::FixedSeed(123), 1).unwrap();
        assert_eq!(a, b);
        let replay = (0..a.iterations).fold(123u64, |x, _| rng::mix64(x));
        assert_eq!(a.final_random, replay);
        let c = consume_energy(&sim_probe(7), 100, SeedSource::FixedSeed(124), 1).unwrap();
        assert_ne!(a.final_random, c.final_random);
    }

    #[test]
    fn check_interval_amortizes_reads() {
        let r = consume_energy(&sim_probe(10), 35, SeedSource::FixedSeed(9), 5).unwrap();
        assert_eq!(r.consumed_uj, 40);
        assert_eq!(r.iterations, 1 + 3 * 5);
    }

    #[test]
    fn powercap_burn_never_under_burns() {
        use std::fs;
        let tmp = tempfile::tempdir().unwrap();
        let z = tmp.path().join("intel-rapl:0");
        fs::create_dir_all(&z).unwrap();
        fs::write(z.join("name"), "package-0").unwrap();
        fs::write(z.join("energy_uj"), "999990").unwrap();
        fs::write(z.join("max_energy_range_uj"), "1000000").unwrap();
        let cfg = ProbeConfig {
            powercap_root: tmp.path().into(),
            lock_path: tmp.path().join("lock"),
            ..ProbeConfig::new([MetricKind::EnergyPkg])
        };
        let mut session = probes::start_probe(&cfg, &MeasurementContext::detached()).unwrap();
        // rename keeps each counter update atomic for the concurrent reader
        let zone = z.clone();
        let stepper = std::thread::spawn(move || {
            for v in [999_995u64, 3, 8, 30, 60] {
                std::thread::sleep(std::time::Duration::from_millis(5));
                fs::write(zone.join("energy_uj.tmp"), v.to_string()).unwrap();
                fs::rename(zone.join("energy_uj.tmp"), zone.join("energy_uj")).unwrap();
            }
        });
        let r = burn(&mut session, 50, 1, 1).unwrap();
        stepper.join().unwrap();
        // 5 + 8 (wrap) + 5 + 22 + 30
        assert_eq!(r.consumed_uj, 70, "{r:?}");
    }

    fn coverage() -> (TestSelection, CoverageMap, CoverageMap) {
        let mut v2 = CoverageMap::new(Version::V2);
        v2.insert(t("A"), "src/x.rs", 4, 1).unwrap();
        v2.insert(t("B"), "src/x.rs", 4, 2).unwrap();
        v2.insert(t("C"), "src/y.rs", 1, 1).unwrap();
        let sel = TestSelection {
            selected: [t("A"), t("B"), t("C")].into(),
            ..Default::default()
        };
        (sel, CoverageMap::new(Version::V1), v2)
    }

    fn spec(targets: MutationTargets) -> MutationSpec {
        MutationSpec {
            payload_uj: 1000,
            targets,
            seed_source: SeedSource::FixedSeed(5),
            check_every: 1,
        }
    }

    #[test]
    fn plan_from_line_target() {
        let (sel, v1, v2) = coverage();
        let line = LineRef::new("src/x.rs", 4, Version::V2).unwrap();
        let plan = plan_mutation(&spec(MutationTargets::Lines([line.clone()].into())), &sel, &v1, &v2).unwrap();
        assert_eq!(plan.wrapped_tests, BTreeSet::from([t("A"), t("B")]));
        assert_eq!(plan.ground_truth_lines, BTreeSet::from([line]));
        assert_eq!(plan.seed, 5);
    }

    #[test]
    fn plan_from_test_target() {
        let (sel, v1, v2) = coverage();
        let plan = plan_mutation(&spec(MutationTargets::Tests([t("C")].into())), &sel, &v1, &v2).unwrap();
        assert_eq!(plan.wrapped_tests, BTreeSet::from([t("C")]));
        assert!(plan.ground_truth_lines.is_empty());
    }

    #[test]
    fn uncovered_target_unresolvable() {
        let (sel, v1, v2) = coverage();
        let line = LineRef::new("src/z.rs", 1, Version::V2).unwrap();
        let err = plan_mutation(&spec(MutationTargets::Lines([line].into())), &sel, &v1, &v2).unwrap_err();
        assert!(matches!(err, MutationError::TargetUnresolvable(ref v) if v.len() == 1));
        let err = plan_mutation(&spec(MutationTargets::Tests([t("Z")].into())), &sel, &v1, &v2).unwrap_err();
        assert!(matches!(err, MutationError::TargetUnresolvable(_)));
    }

    #[test]
    fn burn_command_wraps_v2_only() {
        let (sel, v1, v2) = coverage();
        let plan = plan_mutation(&spec(MutationTargets::Tests([t("C")].into())), &sel, &v1, &v2).unwrap();
        let cmd = plan.burn_command("/usr/bin/joulediff", &["--powercap-root".into(), "/tmp/pc".into()]);
        assert_eq!(
            cmd,
            "'/usr/bin/joulediff' burn --payload-uj 1000 --seed 5 --check-every 1 '--powercap-root' '/tmp/pc' >/dev/null"
        );
        let run = crate::runner::RunPlan::new(vec![t("C")], ".".into(), ".".into(), "go {test_id}".into());
        let ex = plan.apply(CommandExecutor::from_plan(&run), "burn");
        assert_eq!(ex.command_line(&t("C"), Version::V1, None), "go C");
        assert_eq!(ex.command_line(&t("C"), Version::V2, None), "burn; go C");
    }

    #[cfg(unix)]
    #[test]
    fn mutation_keeps_exit_code() {
        use crate::runner::TestExecutor;
        let (sel, v1, v2) = coverage();
        let plan = plan_mutation(&spec(MutationTargets::Tests([t("C")].into())), &sel, &v1, &v2).unwrap();
        for code in [0, 1, 7] {
            let run = crate::runner::RunPlan::new(vec![t("C")], ".".into(), ".".into(), format!("exit {code} # {{test_id}}"));
            let mut plain = CommandExecutor::from_plan(&run);
            let mut mutated = plan.apply(CommandExecutor::from_plan(&run), "true");
            assert_eq!(
                plain.run(&t("C"), Version::V2, None).unwrap(),
                mutated.run(&t("C"), Version::V2, None).unwrap()
            );
        }
    }
}
