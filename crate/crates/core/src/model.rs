//! Domain vocabulary shared by every pipeline stage: versions, test ids,
//! line references, metric kinds, measurement records and coverage maps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

/// Which side of the code change a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Version {
    /// Before the change.
    #[serde(rename = "v1")]
    V1,
    /// After the change.
    #[serde(rename = "v2")]
    V2,
}

impl Version {
    pub const BOTH: [Version; 2] = [Version::V1, Version::V2];

    pub fn as_str(self) -> &'static str {
        match self {
            Version::V1 => "v1",
            Version::V2 => "v2",
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "v1" => Ok(Version::V1),
            "v2" => Ok(Version::V2),
            other => Err(format!("unknown version tag `{other}` (expected v1 or v2)")),
        }
    }
}

/// Opaque, version-stable test identifier such as `suite#name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct TestId(String);

impl TestId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::Invalid("test id must not be empty".into()));
        }
        Ok(TestId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl<'de> Deserialize<'de> for TestId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TestId::new(s).map_err(de::Error::custom)
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for TestId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TestId::new(s)
    }
}

/// Normalizes a repository-relative path: forward slashes, no `.`
/// segments, no leading `./` or `/`. Paths escaping the root with `..`
/// are rejected.
pub fn normalize_path(raw: &str) -> Result<String, ModelError> {
    let unified = raw.replace('\\', "/");
    let mut parts: Vec<&str> = Vec::new();
    for seg in unified.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return Err(ModelError::Invalid(format!("path `{raw}` escapes the repository root")));
                }
            }
            s => parts.push(s),
        }
    }
    if parts.is_empty() {
        return Err(ModelError::Invalid(format!("path `{raw}` is empty after normalization")));
    }
    Ok(parts.join("/"))
}

/// One source line in one version of the program.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LineRef {
    pub file: String,
    pub line: u32,
    pub version: Version,
}

impl LineRef {
    pub fn new(file: &str, line: u32, version: Version) -> Result<Self, ModelError> {
        if line == 0 {
            return Err(ModelError::Invalid(format!("line numbers are 1-based, got 0 in `{file}`")));
        }
        Ok(LineRef {
            file: normalize_path(file)?,
            line,
            version,
        })
    }
}

impl<'de> Deserialize<'de> for LineRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            file: String,
            line: u32,
            version: Version,
        }
        let raw = Raw::deserialize(deserializer)?;
        LineRef::new(&raw.file, raw.line, raw.version).map_err(de::Error::custom)
    }
}

impl fmt::Display for LineRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}@{}", self.file, self.line, self.version)
    }
}

/// The measured variables. Energy is in microjoules, duration in seconds,
/// counters are absolute event counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[serde(rename = "energy_pkg_uj")]
    EnergyPkg,
    #[serde(rename = "energy_dram_uj")]
    EnergyDram,
    #[serde(rename = "duration_s")]
    DurationSeconds,
    Instructions,
    Cycles,
    CacheReferences,
    CacheMisses,
    Branches,
    BranchMisses,
}

impl MetricKind {
    pub const ALL: [MetricKind; 9] = [
        MetricKind::EnergyPkg,
        MetricKind::EnergyDram,
        MetricKind::DurationSeconds,
        MetricKind::Instructions,
        MetricKind::Cycles,
        MetricKind::CacheReferences,
        MetricKind::CacheMisses,
        MetricKind::Branches,
        MetricKind::BranchMisses,
    ];

    pub const COUNTERS: [MetricKind; 6] = [
        MetricKind::Instructions,
        MetricKind::Cycles,
        MetricKind::CacheReferences,
        MetricKind::CacheMisses,
        MetricKind::Branches,
        MetricKind::BranchMisses,
    ];

    /// Wire name, as used in logs, reports and CLI flags.
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::EnergyPkg => "energy_pkg_uj",
            MetricKind::EnergyDram => "energy_dram_uj",
            MetricKind::DurationSeconds => "duration_s",
            MetricKind::Instructions => "instructions",
            MetricKind::Cycles => "cycles",
            MetricKind::CacheReferences => "cache_references",
            MetricKind::CacheMisses => "cache_misses",
            MetricKind::Branches => "branches",
            MetricKind::BranchMisses => "branch_misses",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MetricKind::EnergyPkg | MetricKind::EnergyDram => "uJ",
            MetricKind::DurationSeconds => "s",
            _ => "count",
        }
    }

    pub fn is_energy(self) -> bool {
        matches!(self, MetricKind::EnergyPkg | MetricKind::EnergyDram)
    }

    pub fn is_counter(self) -> bool {
        MetricKind::COUNTERS.contains(&self)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace('-', "_");
        MetricKind::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == wanted || m.as_str().trim_end_matches("_uj") == wanted)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// One probe reading for one test execution on one version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub test: TestId,
    pub version: Version,
    pub iteration: u32,
    pub values: BTreeMap<MetricKind, f64>,
    pub probe_id: String,
}

impl MeasurementRecord {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (metric, value) in &self.values {
            if !value.is_finite() || *value < 0.0 {
                return Err(ModelError::Invalid(format!(
                    "{} {} iteration {}: {metric} = {value} is not a finite non-negative value",
                    self.test, self.version, self.iteration
                )));
            }
        }
        if let Some(d) = self.values.get(&MetricKind::DurationSeconds) {
            if *d <= 0.0 {
                return Err(ModelError::Invalid(format!(
                    "{} {} iteration {}: duration must be positive",
                    self.test, self.version, self.iteration
                )));
            }
        }
        Ok(())
    }
}

/// Per-version line coverage: test -> file -> line -> execution count.
///
/// Absent entries mean zero executions; stored counts are always >= 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    pub version: Version,
    entries: BTreeMap<TestId, BTreeMap<String, BTreeMap<u32, u64>>>,
    test_locations: BTreeMap<TestId, String>,
}

impl CoverageMap {
    pub fn new(version: Version) -> Self {
        CoverageMap {
            version,
            entries: BTreeMap::new(),
            test_locations: BTreeMap::new(),
        }
    }

    /// Records `count` executions of `file:line` by `test`. A zero count
    /// only registers the test.
    pub fn insert(&mut self, test: TestId, file: &str, line: u32, count: u64) -> Result<(), ModelError> {
        let file = normalize_path(file)?;
        if line == 0 {
            return Err(ModelError::Invalid("line numbers are 1-based".into()));
        }
        let per_test = self.entries.entry(test).or_default();
        if count > 0 {
            *per_test.entry(file).or_default().entry(line).or_insert(0) += count;
        }
        Ok(())
    }

    /// Registers a test with no covered lines.
    pub fn add_test(&mut self, test: TestId) {
        self.entries.entry(test).or_default();
    }

    pub fn set_test_location(&mut self, test: TestId, file: &str) -> Result<(), ModelError> {
        self.test_locations.insert(test, normalize_path(file)?);
        Ok(())
    }

    /// exec(l, t): how many times `test` executed `file:line`, 0 if never.
    pub fn exec(&self, test: &TestId, file: &str, line: u32) -> u64 {
        self.entries
            .get(test)
            .and_then(|files| files.get(file))
            .and_then(|lines| lines.get(&line))
            .copied()
            .unwrap_or(0)
    }

    pub fn exec_line(&self, test: &TestId, line: &LineRef) -> u64 {
        self.exec(test, &line.file, line.line)
    }

    pub fn tests(&self) -> impl Iterator<Item = &TestId> {
        self.entries.keys()
    }

    pub fn contains_test(&self, test: &TestId) -> bool {
        self.entries.contains_key(test)
    }

    pub fn test_count(&self) -> usize {
        self.entries.len()
    }

    /// Tests with a positive count on `file:line`.
    pub fn tests_covering<'a>(&'a self, file: &'a str, line: u32) -> impl Iterator<Item = &'a TestId> + 'a {
        self.entries
            .iter()
            .filter(move |(_, files)| files.get(file).is_some_and(|l| l.contains_key(&line)))
            .map(|(t, _)| t)
    }

    pub fn test_location(&self, test: &TestId) -> Option<&str> {
        self.test_locations.get(test).map(String::as_str)
    }

    pub fn test_locations(&self) -> &BTreeMap<TestId, String> {
        &self.test_locations
    }

    /// Parses the coverage JSON document and enforces every invariant.
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let raw: RawCoverage = serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        let mut map = CoverageMap::new(raw.version);
        for (test, files) in raw.tests {
            let test = TestId::new(test).map_err(|e| ModelError::Schema(e.to_string()))?;
            map.add_test(test.clone());
            for (file, lines) in files {
                for (line_key, count) in lines {
                    let line: u32 = line_key
                        .parse()
                        .ok()
                        .filter(|l| *l >= 1)
                        .ok_or_else(|| ModelError::Schema(format!("test `{test}` file `{file}`: `{line_key}` is not a positive line number")))?;
                    if count == 0 {
                        return Err(ModelError::Schema(format!(
                            "test `{test}` {file}:{line}: execution counts must be >= 1 (omit unexecuted lines)"
                        )));
                    }
                    map.insert(test.clone(), &file, line, count)
                        .map_err(|e| ModelError::Schema(e.to_string()))?;
                }
            }
        }
        for (test, file) in raw.test_locations {
            let test = TestId::new(test).map_err(|e| ModelError::Schema(e.to_string()))?;
            map.set_test_location(test, &file).map_err(|e| ModelError::Schema(e.to_string()))?;
        }
        Ok(map)
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawCoverage {
            version: self.version,
            tests: self
                .entries
                .iter()
                .map(|(t, files)| {
                    let files = files
                        .iter()
                        .map(|(f, lines)| (f.clone(), lines.iter().map(|(l, c)| (l.to_string(), *c)).collect()))
                        .collect();
                    (t.as_str().to_owned(), files)
                })
                .collect(),
            test_locations: self
                .test_locations
                .iter()
                .map(|(t, f)| (t.as_str().to_owned(), f.clone()))
                .collect(),
        };
        serde_json::to_string(&raw).expect("coverage maps always serialize")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoverage {
    version: Version,
    tests: BTreeMap<String, BTreeMap<String, BTreeMap<String, u64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    test_locations: BTreeMap<String, String>,
}

/// Reads a coverage file. Missing files and malformed contents are
/// reported as distinct errors.
pub fn load_coverage(path: &Path) -> Result<CoverageMap, ModelError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ModelError::NotFound(path.display().to_string()),
        _ => ModelError::Io(path.display().to_string(), e),
    })?;
    CoverageMap::from_json_str(&text).map_err(|e| match e {
        ModelError::Schema(msg) => ModelError::Schema(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Serializes a value as canonical JSON: object keys sorted, compact.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, ModelError> {
    let tree = serde_json::to_value(value).map_err(|e| ModelError::Serialization(e.to_string()))?;
    serde_json::to_string(&tree).map_err(|e| ModelError::Serialization(e.to_string()))
}

/// Serializes an `f64` that must be finite; used for report fields.
pub(crate) fn finite<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if value.is_finite() {
        serializer.serialize_f64(*value)
    } else {
        Err(serde::ser::Error::custom(format!("non-finite value {value} cannot be serialized")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("serialization failed: {0}")]
    Serialization(String),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] io::Error),
}
