//! Spectrum-based ranking of changed lines. Tests whose energy delta is
//! strictly positive play the role of failing tests; every other selected
//! test passes. Lines are scored with Tarantula:
//!
//! ```text
//! score(l) = (e_f/F) / (e_f/F + e_p/P)
//! ```
//!
//! Coverage is binary here (executed at least once or not).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::delta::ExecView;
use crate::model::{finite, LineRef, TestId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FaultLocError {
    #[error("no test increases energy; the ranking is undefined")]
    NoFailingTests,
}

/// Splits tests into energy-increasing (`Δ > 0`) and the rest.
pub fn partition_tests(deltas: &BTreeMap<TestId, f64>) -> (BTreeSet<TestId>, BTreeSet<TestId>) {
    let (failing, passing): (Vec<_>, Vec<_>) = deltas.iter().partition(|(_, d)| **d > 0.0);
    (
        failing.into_iter().map(|(t, _)| t.clone()).collect(),
        passing.into_iter().map(|(t, _)| t.clone()).collect(),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpectrum {
    pub e_f: usize,
    pub e_p: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spectrum {
    pub lines: BTreeMap<LineRef, LineSpectrum>,
    pub failing_total: usize,
    pub passing_total: usize,
}

impl Spectrum {
    pub fn build<'a>(
        lines: impl IntoIterator<Item = &'a LineRef>,
        failing: &BTreeSet<TestId>,
        passing: &BTreeSet<TestId>,
        view: ExecView<'_>,
    ) -> Spectrum {
        let count = |l: &LineRef, tests: &BTreeSet<TestId>| tests.iter().filter(|t| view.exec(l, t) > 0).count();
        Spectrum {
            lines: lines
                .into_iter()
                .map(|l| {
                    (
                        l.clone(),
                        LineSpectrum {
                            e_f: count(l, failing),
                            e_p: count(l, passing),
                        },
                    )
                })
                .collect(),
            failing_total: failing.len(),
            passing_total: passing.len(),
        }
    }
}

pub fn tarantula(e_f: usize, e_p: usize, failing_total: usize, passing_total: usize) -> f64 {
    let fail_ratio = if failing_total == 0 { 0.0 } else { e_f as f64 / failing_total as f64 };
    let pass_ratio = if passing_total == 0 { 0.0 } else { e_p as f64 / passing_total as f64 };
    let denom = fail_ratio + pass_ratio;
    if denom == 0.0 {
        0.0
    } else {
        fail_ratio / denom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLine {
    pub rank: usize,
    pub line: LineRef,
    #[serde(serialize_with = "finite")]
    pub score: f64,
    pub e_f: usize,
    pub e_p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousnessRanking {
    pub entries: Vec<RankedLine>,
    pub failing_total: usize,
    pub passing_total: usize,
}

impl SuspiciousnessRanking {
    /// 1-based position of `line`, if ranked.
    pub fn rank_of(&self, line: &LineRef) -> Option<usize> {
        self.entries.iter().find(|e| &e.line == line).map(|e| e.rank)
    }

    /// Best (smallest) rank among `lines`.
    pub fn best_rank<'a>(&self, lines: impl IntoIterator<Item = &'a LineRef>) -> Option<usize> {
        lines.into_iter().filter_map(|l| self.rank_of(l)).min()
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:>4}  {:>6}  {:>4}  {:>4}  line\n", "rank", "score", "e_f", "e_p");
        for e in &self.entries {
            out.push_str(&format!("{:>4}  {:>6.4}  {:>4}  {:>4}  {}\n", e.rank, e.score, e.e_f, e.e_p, e.line));
        }
        out
    }
}

/// Scores and orders every line of the spectrum. Ties keep source order
/// (file, line, version).
pub fn tarantula_scores(spectrum: &Spectrum) -> Result<SuspiciousnessRanking, FaultLocError> {
    if spectrum.failing_total == 0 {
        return Err(FaultLocError::NoFailingTests);
    }
    let mut scored: Vec<(LineRef, f64, LineSpectrum)> = spectrum
        .lines
        .iter()
        .map(|(l, s)| (l.clone(), tarantula(s.e_f, s.e_p, spectrum.failing_total, spectrum.passing_total), *s))
        .collect();
    // BTreeMap iteration is already in source order; a stable sort keeps it for ties
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(SuspiciousnessRanking {
        entries: scored
            .into_iter()
            .enumerate()
            .map(|(i, (line, score, s))| RankedLine {
                rank: i + 1,
                line,
                score,
                e_f: s.e_f,
                e_p: s.e_p,
            })
            .collect(),
        failing_total: spectrum.failing_total,
        passing_total: spectrum.passing_total,
    })
}
