//! Per-test deltas and the coverage-weighted commit delta Δ_Ω.
//!
//! For the changed lines `l` and selected tests `t`:
//!
//! ```text
//! θ(l) = Σ_t exec(l,t)      Θ = Σ_l θ(l)        φ(l) = θ(l) / Θ
//! ω(t) = Σ_l φ(l)·exec(l,t) Ω(t) = Δ(t)·ω(t)    Δ_Ω = Σ_t Ω(t)
//! ```
//!
//! `exec` is read from v1 coverage for deleted lines and from v2 coverage
//! for added lines.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::diff::ChangeSet;
use crate::model::{finite, CoverageMap, LineRef, MetricKind, TestId, Version};
use crate::runner::MeasurementLog;
use crate::select::TestSelection;
use crate::stats::{self, ConclusivenessVerdict, StabilitySummary, StatsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeltaError {
    #[error("no {metric} measurements for {test} on {version}")]
    MissingMeasurements {
        test: TestId,
        version: Version,
        metric: MetricKind,
    },
    #[error("selected tests execute none of the changed lines (Θ = 0); coverage and selection disagree")]
    ZeroTheta,
    #[error("test selection is empty")]
    EmptySelection,
    #[error("{0} has no coverage entries in either version")]
    MissingCoverage(TestId),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Median,
    Mean,
}

impl Aggregator {
    pub fn of(self, s: &StabilitySummary) -> f64 {
        match self {
            Aggregator::Median => s.median,
            Aggregator::Mean => s.mean,
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median" => Ok(Aggregator::Median),
            "mean" => Ok(Aggregator::Mean),
            other => Err(format!("unknown aggregator `{other}` (median or mean)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDelta {
    pub test: TestId,
    pub metric: MetricKind,
    /// aggregate(v2) − aggregate(v1)
    #[serde(serialize_with = "finite")]
    pub delta: f64,
    pub v1_summary: StabilitySummary,
    pub v2_summary: StabilitySummary,
}

/// Repetition values of one (test, version, metric), by iteration.
pub fn samples(log: &MeasurementLog, test: &TestId, version: Version, metric: MetricKind) -> Vec<(u32, f64)> {
    let mut out: Vec<(u32, f64)> = log
        .records
        .iter()
        .filter(|r| &r.test == test && r.version == version)
        .filter_map(|r| r.values.get(&metric).map(|v| (r.iteration, *v)))
        .collect();
    out.sort_by_key(|(i, _)| *i);
    out
}

pub fn per_test_delta(
    log: &MeasurementLog,
    test: &TestId,
    metric: MetricKind,
    aggregator: Aggregator,
) -> Result<TestDelta, DeltaError> {
    let summary = |version| -> Result<StabilitySummary, DeltaError> {
        let xs: Vec<f64> = samples(log, test, version, metric).into_iter().map(|(_, v)| v).collect();
        if xs.is_empty() {
            return Err(DeltaError::MissingMeasurements {
                test: test.clone(),
                version,
                metric,
            });
        }
        Ok(stats::summarize(&xs)?)
    };
    let v1_summary = summary(Version::V1)?;
    let v2_summary = summary(Version::V2)?;
    Ok(TestDelta {
        test: test.clone(),
        metric,
        delta: aggregator.of(&v2_summary) - aggregator.of(&v1_summary),
        v1_summary,
        v2_summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineWeight {
    pub line: LineRef,
    pub theta: u64,
    #[serde(serialize_with = "finite")]
    pub phi: f64,
}

/// exec(l,t) with the version split: deletions read v1, additions read v2.
#[derive(Debug, Clone, Copy)]
pub struct ExecView<'a> {
    pub v1: &'a CoverageMap,
    pub v2: &'a CoverageMap,
}

impl<'a> ExecView<'a> {
    pub fn new(v1: &'a CoverageMap, v2: &'a CoverageMap) -> Self {
        ExecView { v1, v2 }
    }

    pub fn exec(&self, line: &LineRef, test: &TestId) -> u64 {
        match line.version {
            Version::V1 => self.v1.exec_line(test, line),
            Version::V2 => self.v2.exec_line(test, line),
        }
    }

    pub fn knows(&self, test: &TestId) -> bool {
        self.v1.contains_test(test) || self.v2.contains_test(test)
    }
}

/// θ and φ for every changed line, in change-set order.
pub fn line_weights(
    change: &ChangeSet,
    selection: &TestSelection,
    cov_v1: &CoverageMap,
    cov_v2: &CoverageMap,
) -> Result<Vec<LineWeight>, DeltaError> {
    if selection.selected.is_empty() {
        return Err(DeltaError::EmptySelection);
    }
    let view = ExecView::new(cov_v1, cov_v2);
    let thetas: Vec<(LineRef, u64)> = change
        .changed_lines()
        .map(|l| (l.clone(), selection.selected.iter().map(|t| view.exec(l, t)).sum()))
        .collect();
    let total: u64 = thetas.iter().map(|(_, th)| th).sum();
    if total == 0 {
        return Err(DeltaError::ZeroTheta);
    }
    Ok(thetas
        .into_iter()
        .map(|(line, theta)| LineWeight {
            phi: theta as f64 / total as f64,
            line,
            theta,
        })
        .collect())
}

/// ω, Ω and Δ_Ω for one metric before classification.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFragment {
    pub metric: MetricKind,
    pub omega: BTreeMap<TestId, f64>,
    pub capital_omega: BTreeMap<TestId, f64>,
    pub delta_omega: f64,
}

/// ω(t) for each test.
pub fn test_weights(
    tests: impl IntoIterator<Item = TestId>,
    weights: &[LineWeight],
    view: ExecView<'_>,
) -> Result<BTreeMap<TestId, f64>, DeltaError> {
    tests
        .into_iter()
        .map(|t| {
            if !view.knows(&t) {
                return Err(DeltaError::MissingCoverage(t));
            }
            let w = weights.iter().map(|lw| lw.phi * view.exec(&lw.line, &t) as f64).sum();
            Ok((t, w))
        })
        .collect()
}

pub fn weighted_delta(
    metric: MetricKind,
    deltas: &BTreeMap<TestId, f64>,
    weights: &[LineWeight],
    view: ExecView<'_>,
) -> Result<WeightedFragment, DeltaError> {
    let omega = test_weights(deltas.keys().cloned(), weights, view)?;
    let capital_omega: BTreeMap<TestId, f64> = deltas.iter().map(|(t, d)| (t.clone(), d * omega[t])).collect();
    let delta_omega = capital_omega.values().sum();
    Ok(WeightedFragment {
        metric,
        omega,
        capital_omega,
        delta_omega,
    })
}

/// How large Δ_Ω must be to count as a regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Threshold {
    /// Δ_Ω > value
    Absolute(f64),
    /// Δ_Ω / Σ|Ω(t)| > value
    Relative(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Absolute(0.0)
    }
}

impl Threshold {
    pub fn exceeded(self, delta_omega: f64, capital_omega: &BTreeMap<TestId, f64>) -> bool {
        match self {
            Threshold::Absolute(v) => delta_omega > v,
            Threshold::Relative(r) => {
                let mass: f64 = capital_omega.values().map(|w| w.abs()).sum();
                let ratio = if mass == 0.0 { 0.0 } else { delta_omega / mass };
                ratio > r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedVerdict {
    pub metric: MetricKind,
    pub omega_per_test: BTreeMap<TestId, f64>,
    pub capital_omega_per_test: BTreeMap<TestId, f64>,
    #[serde(serialize_with = "finite")]
    pub delta_omega: f64,
    pub breaking: bool,
    pub conclusive: ConclusivenessVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

/// Applies the threshold and, unless `check_conclusiveness` is off, the
/// range-separation requirement.
pub fn classify(
    fragment: WeightedFragment,
    conclusive: ConclusivenessVerdict,
    threshold: Threshold,
    check_conclusiveness: bool,
) -> WeightedVerdict {
    let above = threshold.exceeded(fragment.delta_omega, &fragment.capital_omega);
    let separated = !check_conclusiveness || conclusive.is_increase();
    let annotation = (above && !separated).then(|| "inconclusive".to_owned());
    WeightedVerdict {
        metric: fragment.metric,
        omega_per_test: fragment.omega,
        capital_omega_per_test: fragment.capital_omega,
        delta_omega: fragment.delta_omega,
        breaking: above && separated,
        conclusive,
        annotation,
    }
}

/// Per-repetition weighted totals `S_v(i) = Σ_t ω(t)·V(t_v, i)`. Only
/// iterations recorded for every weighted test on a version are used.
pub fn weighted_series(
    log: &MeasurementLog,
    omega: &BTreeMap<TestId, f64>,
    metric: MetricKind,
    version: Version,
) -> Vec<f64> {
    let per_test: Vec<(f64, BTreeMap<u32, f64>)> = omega
        .iter()
        .map(|(t, w)| (*w, samples(log, t, version, metric).into_iter().collect()))
        .collect();
    let Some((_, first)) = per_test.first() else {
        return Vec::new();
    };
    let common: BTreeSet<u32> = first
        .keys()
        .copied()
        .filter(|i| per_test.iter().all(|(_, m)| m.contains_key(i)))
        .collect();
    common
        .into_iter()
        .map(|i| per_test.iter().map(|(w, m)| w * m[&i]).sum())
        .collect()
}

/// Conclusiveness of the commit-level difference: the observed ranges of
/// the weighted per-repetition totals of v1 and v2 must be disjoint.
pub fn commit_conclusiveness(
    log: &MeasurementLog,
    omega: &BTreeMap<TestId, f64>,
    metric: MetricKind,
) -> ConclusivenessVerdict {
    let s1 = weighted_series(log, omega, metric, Version::V1);
    let s2 = weighted_series(log, omega, metric, Version::V2);
    stats::ranges_disjoint(&s1, &s2).unwrap_or(ConclusivenessVerdict::Inconclusive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MeasurementRecord;
    use crate::stats::Direction;

    fn t(s: &str) -> TestId {
        TestId::new(s).unwrap()
    }

    fn log_of(values: &[(&str, Version, &[f64])]) -> MeasurementLog {
        let mut log = MeasurementLog::default();
        for (test, version, xs) in values {
            for (i, x) in xs.iter().enumerate() {
                log.records.push(MeasurementRecord {
                    test: t(test),
                    version: *version,
                    iteration: i as u32,
                    values: BTreeMap::from([(MetricKind::EnergyPkg, *x)]),
                    probe_id: "sim".into(),
                });
            }
        }
        log
    }

    #[test]
    fn constant_samples() {
        let log = log_of(&[("A", Version::V1, &[10.0; 3]), ("A", Version::V2, &[12.0; 3])]);
        let d = per_test_delta(&log, &t("A"), MetricKind::EnergyPkg, Aggregator::Median).unwrap();
        assert_eq!(d.delta, 2.0);
    }

    #[test]
    fn identical_versions() {
        let xs = [3.0, 9.0, 4.0];
        let log = log_of(&[("A", Version::V1, &xs), ("A", Version::V2, &xs)]);
        for agg in [Aggregator::Median, Aggregator::Mean] {
            assert_eq!(per_test_delta(&log, &t("A"), MetricKind::EnergyPkg, agg).unwrap().delta, 0.0);
        }
    }

    #[test]
    fn medians_by_hand() {
        let log = log_of(&[("A", Version::V1, &[9.0, 10.0, 11.0]), ("A", Version::V2, &[10.0, 11.0, 15.0])]);
        let d = per_test_delta(&log, &t("A"), MetricKind::EnergyPkg, Aggregator::Median).unwrap();
        assert_eq!(d.delta, 1.0);
        let m = per_test_delta(&log, &t("A"), MetricKind::EnergyPkg, Aggregator::Mean).unwrap();
        assert!((m.delta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_version() {
        let log = log_of(&[("A", Version::V1, &[1.0])]);
        assert_eq!(
            per_test_delta(&log, &t("A"), MetricKind::EnergyPkg, Aggregator::Median),
            Err(DeltaError::MissingMeasurements {
                test: t("A"),
                version: Version::V2,
                metric: MetricKind::EnergyPkg
            })
        );
    }

    /// l1 executed once by each of t1..t5, l2 once by t6, both added lines.
    fn worked_example() -> (ChangeSet, TestSelection, CoverageMap, CoverageMap) {
        let l1 = LineRef::new("src/app.rs", 10, Version::V2).unwrap();
        let l2 = LineRef::new("src/app.rs", 20, Version::V2).unwrap();
        let mut change = ChangeSet::default();
        change.additions.extend([l1.clone(), l2.clone()]);
        let v1 = CoverageMap::new(Version::V1);
        let mut v2 = CoverageMap::new(Version::V2);
        for i in 1..=5 {
            v2.insert(t(&format!("t{i}")), &l1.file, l1.line, 1).unwrap();
        }
        v2.insert(t("t6"), &l2.file, l2.line, 1).unwrap();
        let selection = TestSelection {
            selected: (1..=6).map(|i| t(&format!("t{i}"))).collect(),
            ..Default::default()
        };
        (change, selection, v1, v2)
    }

    #[test]
    fn worked_example_weights() {
        let (change, sel, v1, v2) = worked_example();
        let w = line_weights(&change, &sel, &v1, &v2).unwrap();
        assert_eq!(w.iter().map(|x| x.theta).collect::<Vec<_>>(), [5, 1]);
        assert!((w[0].phi - 5.0 / 6.0).abs() < 1e-15);
        assert!((w[1].phi - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn worked_example_delta_omega() {
        let (change, sel, v1, v2) = worked_example();
        let w = line_weights(&change, &sel, &v1, &v2).unwrap();
        let mut deltas: BTreeMap<TestId, f64> = (1..=5).map(|i| (t(&format!("t{i}")), 1.0)).collect();
        deltas.insert(t("t6"), -5.0);
        assert_eq!(deltas.values().sum::<f64>(), 0.0);
        let frag = weighted_delta(MetricKind::EnergyPkg, &deltas, &w, ExecView::new(&v1, &v2)).unwrap();
        assert!((frag.omega[&t("t6")] - 1.0 / 6.0).abs() < 1e-15);
        assert!((frag.delta_omega - 10.0 / 3.0).abs() < 1e-12);
        let v = classify(frag, ConclusivenessVerdict::Conclusive(Direction::Increase), Threshold::default(), true);
        assert!(v.breaking);
        assert_eq!(v.annotation, None);
    }

    #[test]
    fn single_and_symmetric_lines() {
        let l = LineRef::new("a.rs", 1, Version::V2).unwrap();
        let mut change = ChangeSet::default();
        change.additions.insert(l.clone());
        let mut v2 = CoverageMap::new(Version::V2);
        v2.insert(t("A"), "a.rs", 1, 7).unwrap();
        let v1 = CoverageMap::new(Version::V1);
        let sel = TestSelection {
            selected: BTreeSet::from([t("A")]),
            ..Default::default()
        };
        assert_eq!(line_weights(&change, &sel, &v1, &v2).unwrap()[0].phi, 1.0);

        let d = LineRef::new("a.rs", 4, Version::V1).unwrap();
        change.deletions.insert(d);
        let mut v1 = CoverageMap::new(Version::V1);
        v1.insert(t("A"), "a.rs", 4, 7).unwrap();
        let w = line_weights(&change, &sel, &v1, &v2).unwrap();
        assert_eq!((w[0].phi, w[1].phi), (0.5, 0.5));
    }

    #[test]
    fn one_test_one_line_passes_delta_through() {
        let l = LineRef::new("a.rs", 1, Version::V2).unwrap();
        let mut change = ChangeSet::default();
        change.additions.insert(l);
        let mut v2 = CoverageMap::new(Version::V2);
        v2.insert(t("A"), "a.rs", 1, 1).unwrap();
        let v1 = CoverageMap::new(Version::V1);
        let sel = TestSelection {
            selected: BTreeSet::from([t("A")]),
            ..Default::default()
        };
        let w = line_weights(&change, &sel, &v1, &v2).unwrap();
        let frag = weighted_delta(MetricKind::EnergyPkg, &BTreeMap::from([(t("A"), -4.25)]), &w, ExecView::new(&v1, &v2)).unwrap();
        assert_eq!(frag.delta_omega, -4.25);
    }

    #[test]
    fn zero_theta_and_empty_selection() {
        let (change, mut sel, v1, _) = worked_example();
        let empty_v2 = CoverageMap::new(Version::V2);
        assert_eq!(line_weights(&change, &sel, &v1, &empty_v2), Err(DeltaError::ZeroTheta));
        sel.selected.clear();
        assert_eq!(line_weights(&change, &sel, &v1, &empty_v2), Err(DeltaError::EmptySelection));
    }

    #[test]
    fn missing_coverage_for_delta_test() {
        let (change, sel, v1, v2) = worked_example();
        let w = line_weights(&change, &sel, &v1, &v2).unwrap();
        let deltas = BTreeMap::from([(t("ghost"), 1.0)]);
        assert_eq!(
            weighted_delta(MetricKind::EnergyPkg, &deltas, &w, ExecView::new(&v1, &v2)),
            Err(DeltaError::MissingCoverage(t("ghost")))
        );
    }

    fn frag(delta_omega: f64) -> WeightedFragment {
        WeightedFragment {
            metric: MetricKind::EnergyPkg,
            omega: BTreeMap::new(),
            capital_omega: BTreeMap::from([(t("A"), delta_omega)]),
            delta_omega,
        }
    }

    #[test]
    fn classification_rules() {
        let inc = ConclusivenessVerdict::Conclusive(Direction::Increase);
        assert!(!classify(frag(0.0), inc, Threshold::default(), true).breaking);
        let v = classify(frag(5.0), ConclusivenessVerdict::Inconclusive, Threshold::default(), true);
        assert!(!v.breaking);
        assert_eq!(v.annotation.as_deref(), Some("inconclusive"));
        assert!(classify(frag(5.0), ConclusivenessVerdict::Inconclusive, Threshold::default(), false).breaking);
        assert!(!classify(frag(5.0), inc, Threshold::Absolute(5.0), true).breaking);
        assert!(!classify(frag(-1.0), ConclusivenessVerdict::Inconclusive, Threshold::default(), true)
            .annotation
            .is_some());
    }

    #[test]
    fn relative_threshold() {
        let mut f = frag(1.0);
        f.capital_omega = BTreeMap::from([(t("A"), 3.0), (t("B"), -2.0)]);
        // ratio = 1 / 5
        assert!(Threshold::Relative(0.1).exceeded(f.delta_omega, &f.capital_omega));
        assert!(!Threshold::Relative(0.2).exceeded(f.delta_omega, &f.capital_omega));
    }

    #[test]
    fn weighted_series_and_conclusiveness() {
        let log = log_of(&[
            ("A", Version::V1, &[10.0, 11.0]),
            ("A", Version::V2, &[20.0, 21.0]),
            ("B", Version::V1, &[4.0, 4.0]),
            ("B", Version::V2, &[4.0, 4.0]),
        ]);
        let omega = BTreeMap::from([(t("A"), 0.5), (t("B"), 2.0)]);
        assert_eq!(weighted_series(&log, &omega, MetricKind::EnergyPkg, Version::V1), [13.0, 13.5]);
        assert_eq!(weighted_series(&log, &omega, MetricKind::EnergyPkg, Version::V2), [18.0, 18.5]);
        assert!(commit_conclusiveness(&log, &omega, MetricKind::EnergyPkg).is_increase());
        assert_eq!(
            commit_conclusiveness(&log, &BTreeMap::new(), MetricKind::EnergyPkg),
            ConclusivenessVerdict::Inconclusive
        );
    }
}
