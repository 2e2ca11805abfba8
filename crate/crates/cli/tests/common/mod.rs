#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use tempfile::TempDir;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_joulediff"))
}

pub fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn joulediff");
    assert!(
        out.status.code().is_some_and(|c| c <= 2),
        "joulediff failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Diff adding src/app.rs:10 and src/app.rs:20.
pub const TWO_LINE_DIFF: &str = "\
diff --git a/src/app.rs b/src/app.rs
--- a/src/app.rs
+++ b/src/app.rs
@@ -9,2 +9,3 @@
 line 9
+    added a
 line 10
@@ -18,2 +19,3 @@
 line 18
+    added b
 line 19
";

/// A simulated project: tests t1..t5 execute the added line 10 once,
/// t6 executes the added line 20 once, and every test has a base energy
/// per version.
pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn new(v1: &[f64; 6], v2: &[f64; 6], noise_rel: f64, seed: u64) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (name, bases) in [("v1", v1), ("v2", v2)] {
            fs::create_dir(root.join(name)).unwrap();
            let per_test: BTreeMap<String, serde_json::Value> = bases
                .iter()
                .enumerate()
                .map(|(i, b)| (format!("t{}", i + 1), json!({ "energy_pkg_uj": b })))
                .collect();
            let spec = json!({ "seed": seed, "noise_rel": noise_rel, "per_test_base": per_test });
            fs::write(root.join(name).join("sim.json"), spec.to_string()).unwrap();
        }
        fs::write(root.join("change.diff"), TWO_LINE_DIFF).unwrap();

        let mut cov1 = serde_json::Map::new();
        let mut cov2 = serde_json::Map::new();
        for i in 1..=6 {
            let line = if i <= 5 { "10" } else { "20" };
            cov1.insert(format!("t{i}"), json!({ "src/app.rs": { "3": 2 } }));
            cov2.insert(format!("t{i}"), json!({ "src/app.rs": { "3": 2, line: 1 } }));
        }
        fs::write(root.join("cov_v1.json"), json!({ "version": "v1", "tests": cov1 }).to_string()).unwrap();
        fs::write(root.join("cov_v2.json"), json!({ "version": "v2", "tests": cov2 }).to_string()).unwrap();

        let config = json!({
            "workspace_v1": "v1",
            "workspace_v2": "v2",
            "diff": "change.diff",
            "coverage_v1": "cov_v1.json",
            "coverage_v2": "cov_v2.json",
            "command": "test -n {test_id}",
            "repetitions": 5,
            "warmup_runs": 1,
            "settle_ms": 0,
            "probe": { "simulated_workspace_file": "sim.json", "lock_path": root.join("probe.lock") }
        });
        fs::write(root.join("config.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Fixture { dir }
    }

    /// Five tests gain 1 µJ, the sixth loses 5 µJ.
    pub fn worked_example() -> Fixture {
        Fixture::new(&[100.0; 6], &[101.0, 101.0, 101.0, 101.0, 101.0, 95.0], 0.0, 1)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    /// `joulediff run` on this fixture, writing the report to `report`.
    pub fn run(&self, report: &str) -> Output {
        let mut cmd = bin();
        cmd.arg("run")
            .arg("--config")
            .arg(self.path("config.json"))
            .arg("--output")
            .arg(self.path(report));
        cmd.output().expect("spawn joulediff")
    }
}
