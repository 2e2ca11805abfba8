//! Coverage-based test selection: keep the tests that execute at least one
//! deleted line (in v1) or added line (in v2), minus tests whose own
//! source file is touched by the diff.

use std::collections::BTreeSet;

use globset::{Glob, GlobSetBuilder};
use serde::{Deserialize, Serialize};

use crate::diff::ChangeSet;
use crate::model::{CoverageMap, TestId, Version};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSelection {
    pub selected: BTreeSet<TestId>,
    pub discarded_modified: BTreeSet<TestId>,
    pub from_v1: BTreeSet<TestId>,
    pub from_v2: BTreeSet<TestId>,
    /// Set when no test executes any changed line.
    #[serde(default)]
    pub no_covering_tests: bool,
}

impl TestSelection {
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectError {
    #[error("coverage version mismatch: expected {expected} coverage, got {found}")]
    VersionMismatch { expected: Version, found: Version },
    #[error("invalid test-file glob `{0}`: {1}")]
    BadGlob(String, String),
}

/// Which touched files are test sources, from explicit paths and globs.
pub fn test_files_from_globs<'a>(
    touched: impl IntoIterator<Item = &'a String>,
    globs: &[String],
) -> Result<BTreeSet<String>, SelectError> {
    let mut builder = GlobSetBuilder::new();
    for g in globs {
        builder.add(Glob::new(g).map_err(|e| SelectError::BadGlob(g.clone(), e.to_string()))?);
    }
    let set = builder.build().map_err(|e| SelectError::BadGlob(globs.join(","), e.to_string()))?;
    Ok(touched.into_iter().filter(|p| set.is_match(p.as_str())).cloned().collect())
}

/// Selects the tests covering `change`.
///
/// A test is discarded as modified when its declared location (from the
/// coverage files' `test_locations`) is both touched by the diff and a
/// member of `test_files`. Tests without a declared location are never
/// discarded.
pub fn select_tests(
    change: &ChangeSet,
    cov_v1: &CoverageMap,
    cov_v2: &CoverageMap,
    test_files: &BTreeSet<String>,
) -> Result<TestSelection, SelectError> {
    expect_version(cov_v1, Version::V1)?;
    expect_version(cov_v2, Version::V2)?;

    let covering = |cov: &CoverageMap, lines: &BTreeSet<crate::model::LineRef>| -> BTreeSet<TestId> {
        lines
            .iter()
            .flat_map(|l| cov.tests_covering(&l.file, l.line).cloned().collect::<Vec<_>>())
            .collect()
    };
    let from_v1 = covering(cov_v1, &change.deletions);
    let from_v2 = covering(cov_v2, &change.additions);

    let modified_files: BTreeSet<String> = change.touched_files.intersection(test_files).cloned().collect();
    let is_modified = |t: &TestId| is_modified_test(t, cov_v1, cov_v2, &modified_files);

    let candidates: BTreeSet<TestId> = from_v1.union(&from_v2).cloned().collect();
    let discarded_modified: BTreeSet<TestId> = candidates.iter().filter(|t| is_modified(t)).cloned().collect();
    let selected: BTreeSet<TestId> = candidates.difference(&discarded_modified).cloned().collect();
    let no_covering_tests = selected.is_empty();
    if no_covering_tests {
        log::warn!("no test covers the {} changed lines", change.line_count());
    }
    Ok(TestSelection {
        selected,
        discarded_modified,
        from_v1,
        from_v2,
        no_covering_tests,
    })
}

/// Selects every known test (minus modified ones) regardless of
/// coverage, for full-suite comparison runs.
pub fn select_all_tests(
    change: &ChangeSet,
    cov_v1: &CoverageMap,
    cov_v2: &CoverageMap,
    test_files: &BTreeSet<String>,
) -> Result<TestSelection, SelectError> {
    let mut sel = select_tests(change, cov_v1, cov_v2, test_files)?;
    let modified_files: BTreeSet<String> = change.touched_files.intersection(test_files).cloned().collect();
    for t in cov_v1.tests().chain(cov_v2.tests()) {
        if is_modified_test(t, cov_v1, cov_v2, &modified_files) {
            sel.discarded_modified.insert(t.clone());
        } else {
            sel.selected.insert(t.clone());
        }
    }
    sel.no_covering_tests = sel.selected.is_empty();
    Ok(sel)
}

fn is_modified_test(t: &TestId, cov_v1: &CoverageMap, cov_v2: &CoverageMap, modified_files: &BTreeSet<String>) -> bool {
    [cov_v2.test_location(t), cov_v1.test_location(t)]
        .into_iter()
        .flatten()
        .any(|loc| modified_files.contains(loc))
}

fn expect_version(cov: &CoverageMap, expected: Version) -> Result<(), SelectError> {
    if cov.version != expected {
        return Err(SelectError::VersionMismatch {
            expected,
            found: cov.version,
        });
    }
    Ok(())
}
