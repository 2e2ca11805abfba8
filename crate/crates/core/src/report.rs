//! The delta report: every number needed to re-derive the verdict, plus
//! its canonical JSON form and a plain-text rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::delta::{Aggregator, LineWeight, Threshold};
use crate::faultloc::SuspiciousnessRanking;
use crate::model::{finite, to_canonical_json, LineRef, MetricKind, ModelError, TestId};
use crate::select::TestSelection;
use crate::stats::{ConclusivenessVerdict, StabilityGate, StabilitySummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NotBreaking,
    Breaking,
    Inconclusive,
    NoCoveringTests,
}

impl Verdict {
    /// CI exit code: 0 not breaking, 1 breaking, 2 inconclusive or nothing to measure.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::NotBreaking => 0,
            Verdict::Breaking => 1,
            Verdict::Inconclusive | Verdict::NoCoveringTests => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::NotBreaking => "not-breaking",
            Verdict::Breaking => "breaking",
            Verdict::Inconclusive => "inconclusive",
            Verdict::NoCoveringTests => "no-covering-tests",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    pub verdict_metric: MetricKind,
    pub aggregator: Aggregator,
    pub threshold: Threshold,
    pub check_conclusiveness: bool,
    pub stability_gate: StabilityGate,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            verdict_metric: MetricKind::EnergyPkg,
            aggregator: Aggregator::Median,
            threshold: Threshold::default(),
            check_conclusiveness: true,
            stability_gate: StabilityGate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    #[serde(serialize_with = "finite")]
    pub delta: f64,
    #[serde(serialize_with = "finite")]
    pub omega: f64,
    #[serde(serialize_with = "finite")]
    pub capital_omega: f64,
    pub v1: StabilitySummary,
    pub v2: StabilitySummary,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tests: BTreeMap<TestId, TestEntry>,
    #[serde(serialize_with = "finite")]
    pub delta_omega: f64,
    /// Σ Δ(t) without weighting, for comparison.
    #[serde(serialize_with = "finite")]
    pub unweighted_sum: f64,
    pub breaking: bool,
    pub conclusive: ConclusivenessVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
    pub unstable_tests: BTreeSet<TestId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub lines: BTreeSet<LineRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub verdict: Verdict,
    pub settings: AnalysisSettings,
    pub selection: TestSelection,
    pub changed_lines: usize,
    pub line_weights: Vec<LineWeight>,
    pub theta_total: u64,
    pub metrics: BTreeMap<MetricKind, MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<SuspiciousnessRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report serialization failed: {0}")]
    Serialization(String),
    #[error("cannot write report to {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed report: {0}")]
    Parse(String),
}

impl DeltaReport {
    /// Verdict implied by the verdict metric's numbers.
    pub fn derive_verdict(&self) -> Verdict {
        if self.selection.selected.is_empty() || self.selection.no_covering_tests {
            return Verdict::NoCoveringTests;
        }
        match self.metrics.get(&self.settings.verdict_metric) {
            Some(m) if m.breaking => Verdict::Breaking,
            Some(m) if m.annotation.is_some() => Verdict::Inconclusive,
            Some(_) => Verdict::NotBreaking,
            None => Verdict::Inconclusive,
        }
    }

    /// Recomputes Ω, Δ_Ω, the breaking flags and the verdict from the
    /// report's own numbers.
    pub fn check_consistency(&self) -> Result<(), String> {
        let tol = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        if !self.line_weights.is_empty() {
            let theta: u64 = self.line_weights.iter().map(|w| w.theta).sum();
            if theta != self.theta_total {
                return Err(format!("Θ {} != Σθ {theta}", self.theta_total));
            }
            let phi: f64 = self.line_weights.iter().map(|w| w.phi).sum();
            if !tol(phi, 1.0) {
                return Err(format!("Σφ = {phi}"));
            }
        }
        for (metric, m) in &self.metrics {
            let mut sum = 0.0;
            for (t, e) in &m.tests {
                if !tol(e.capital_omega, e.delta * e.omega) {
                    return Err(format!("{metric} {t}: Ω != Δ·ω"));
                }
                let agg = self.settings.aggregator;
                if !tol(e.delta, agg.of(&e.v2) - agg.of(&e.v1)) {
                    return Err(format!("{metric} {t}: Δ disagrees with the summaries"));
                }
                sum += e.capital_omega;
            }
            if !tol(sum, m.delta_omega) {
                return Err(format!("{metric}: Δ_Ω {} != ΣΩ {sum}", m.delta_omega));
            }
            let capital: BTreeMap<TestId, f64> = m.tests.iter().map(|(t, e)| (t.clone(), e.capital_omega)).collect();
            let above = self.settings.threshold.exceeded(m.delta_omega, &capital);
            let separated = !self.settings.check_conclusiveness || m.conclusive.is_increase();
            if m.breaking != (above && separated) {
                return Err(format!("{metric}: breaking flag does not follow from Δ_Ω and conclusiveness"));
            }
        }
        if self.derive_verdict() != self.verdict {
            return Err(format!("verdict {:?} but numbers imply {:?}", self.verdict, self.derive_verdict()));
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> Result<String, ReportError> {
        let compact = to_canonical_json(self).map_err(|e| match e {
            ModelError::Serialization(m) => ReportError::Serialization(m),
            other => ReportError::Serialization(other.to_string()),
        })?;
        // re-render pretty; keys stay sorted
        let tree: serde_json::Value = serde_json::from_str(&compact).map_err(|e| ReportError::Serialization(e.to_string()))?;
        let mut out = serde_json::to_string_pretty(&tree).map_err(|e| ReportError::Serialization(e.to_string()))?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let vm = self.settings.verdict_metric;
        let _ = writeln!(out, "verdict: {} (metric {vm})", self.verdict.as_str());
        let _ = writeln!(
            out,
            "selected tests: {} (discarded as modified: {}), changed lines: {}, Θ = {}",
            self.selection.selected.len(),
            self.selection.discarded_modified.len(),
            self.changed_lines,
            self.theta_total
        );
        for (metric, m) in &self.metrics {
            let _ = writeln!(
                out,
                "  {:<16} Δ_Ω = {:>14.4}  ΣΔ = {:>14.4}  {:<10} {}{}",
                metric.as_str(),
                m.delta_omega,
                m.unweighted_sum,
                if m.breaking { "BREAKING" } else { "ok" },
                conclusive_str(m.conclusive),
                if m.unstable_tests.is_empty() {
                    String::new()
                } else {
                    format!("  unstable: {}", m.unstable_tests.len())
                }
            );
        }
        if let Some(m) = self.metrics.get(&vm) {
            let _ = writeln!(out, "\n{:<32} {:>14} {:>10} {:>14} {:>8}", "test", "Δ", "ω", "Ω", "stable");
            for (t, e) in &m.tests {
                let _ = writeln!(
                    out,
                    "{:<32} {:>14.4} {:>10.4} {:>14.4} {:>8}",
                    t.as_str(),
                    e.delta,
                    e.omega,
                    e.capital_omega,
                    if e.stable { "yes" } else { "no" }
                );
            }
        }
        if let Some(r) = &self.ranking {
            let _ = writeln!(out, "\nmost suspect changed lines:");
            out.push_str(&r.render_table());
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn conclusive_str(c: ConclusivenessVerdict) -> &'static str {
    match c {
        ConclusivenessVerdict::Conclusive(crate::stats::Direction::Increase) => "conclusive(increase)",
        ConclusivenessVerdict::Conclusive(crate::stats::Direction::Decrease) => "conclusive(decrease)",
        ConclusivenessVerdict::Inconclusive => "inconclusive",
    }
}

/// Writes the canonical JSON form of `report`.
pub fn save_report(report: &DeltaReport, path: &Path) -> Result<(), ReportError> {
    let text = report.to_canonical_json()?;
    fs::write(path, text).map_err(|e| ReportError::Io(path.display().to_string(), e))
}

pub fn load_report(path: &Path) -> Result<DeltaReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| ReportError::Io(path.display().to_string(), e))?;
    DeltaReport::from_json(&text)
}
