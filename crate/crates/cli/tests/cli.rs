mod common;

use std::fs;

use common::{bin, run_ok, Fixture};
use serde_json::Value;

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

#[test]
fn select_prints_covering_tests() {
    let f = Fixture::worked_example();
    let out = run_ok(
        bin()
            .arg("select")
            .arg("--diff")
            .arg(f.path("change.diff"))
            .arg("--coverage-v1")
            .arg(f.path("cov_v1.json"))
            .arg("--coverage-v2")
            .arg(f.path("cov_v2.json")),
    );
    let sel = json(&out.stdout);
    assert_eq!(sel["selected"].as_array().unwrap().len(), 6);
    assert_eq!(sel["no_covering_tests"], false);
}

#[test]
fn measure_then_delta_then_localize() {
    let f = Fixture::worked_example();
    let sim = f.path("sim_both.json");
    fs::write(
        &sim,
        r#"{"seed":3,"noise_rel":0.0,"version_base":{
            "v1":{"t1":{"energy_pkg_uj":100},"t2":{"energy_pkg_uj":100},"t3":{"energy_pkg_uj":100},"t4":{"energy_pkg_uj":100},"t5":{"energy_pkg_uj":100},"t6":{"energy_pkg_uj":100}},
            "v2":{"t1":{"energy_pkg_uj":101},"t2":{"energy_pkg_uj":101},"t3":{"energy_pkg_uj":101},"t4":{"energy_pkg_uj":101},"t5":{"energy_pkg_uj":101},"t6":{"energy_pkg_uj":95}}}}"#,
    )
    .unwrap();
    let log = f.path("log.jsonl");
    run_ok(
        bin()
            .args(["measure", "--tests", "t1,t2,t3,t4,t5,t6", "--command", "test -n {test_id}"])
            .args(["--reps", "3", "--warmup", "0", "--settle-ms", "0"])
            .arg("--workspace-v1")
            .arg(f.path("v1"))
            .arg("--workspace-v2")
            .arg(f.path("v2"))
            .arg("--simulated")
            .arg(&sim)
            .arg("--output")
            .arg(&log),
    );
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 36);
    assert!(f.path("log.jsonl.digest").exists());

    let change = |cmd: &mut std::process::Command| {
        cmd.arg("--diff")
            .arg(f.path("change.diff"))
            .arg("--coverage-v1")
            .arg(f.path("cov_v1.json"))
            .arg("--coverage-v2")
            .arg(f.path("cov_v2.json"))
            .arg("--measurements")
            .arg(&log);
    };
    let mut delta = bin();
    delta.arg("delta");
    change(&mut delta);
    let out = delta.output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    let d = report["metrics"]["energy_pkg_uj"]["delta_omega"].as_f64().unwrap();
    assert!((d - 10.0 / 3.0).abs() < 1e-9);

    let mut loc = bin();
    loc.arg("localize");
    change(&mut loc);
    let out = run_ok(&mut loc);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().nth(1).unwrap().contains("src/app.rs:10@v2"), "{table}");
}

#[test]
fn run_exit_codes() {
    let breaking = Fixture::worked_example();
    let out = breaking.run("r.json");
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("verdict: breaking"));

    let same = Fixture::new(&[100.0; 6], &[100.0; 6], 0.0, 1);
    assert_eq!(same.run("r.json").status.code(), Some(0));
    let report = json(&fs::read(same.path("r.json")).unwrap());
    assert_eq!(report["metrics"]["energy_pkg_uj"]["delta_omega"].as_f64(), Some(0.0));
    assert_eq!(report["verdict"], "not-breaking");

    // nobody executes the changed lines
    let uncovered = Fixture::new(&[100.0; 6], &[100.0; 6], 0.0, 1);
    for v in ["v1", "v2"] {
        fs::write(
            uncovered.path(&format!("cov_{v}.json")),
            format!(r#"{{"version":"{v}","tests":{{"t1":{{"src/app.rs":{{"3":1}}}}}}}}"#),
        )
        .unwrap();
    }
    assert_eq!(uncovered.run("r.json").status.code(), Some(2));
    let report = json(&fs::read(uncovered.path("r.json")).unwrap());
    assert_eq!(report["verdict"], "no-covering-tests");
}

#[test]
fn operational_errors_name_the_stage() {
    let f = Fixture::worked_example();
    fs::remove_file(f.path("cov_v2.json")).unwrap();
    let out = f.run("r.json");
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coverage stage"));

    let f = Fixture::worked_example();
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(f.path("config.json"))
        .args(["--command", "exit 4 # {test_id}"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("measure stage"));
}

#[test]
fn flags_override_config() {
    let f = Fixture::worked_example();
    // a threshold above Δ_Ω flips the verdict
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(f.path("config.json"))
        .args(["--threshold", "4", "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out.stdout);
    assert_eq!(report["settings"]["threshold"]["value"], 4.0);
}

#[test]
fn burn_simulated() {
    let out = run_ok(bin().args(["burn", "--payload-uj", "35", "--seed", "9", "--simulated-quantum-uj", "10"]));
    let r = json(&out.stdout);
    assert_eq!(r["consumed_uj"], 40);
    assert_eq!(r["iterations"], 4);
    let out = bin().args(["burn", "--payload-uj", "0", "--simulated-quantum-uj", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    run_ok(bin().args(["simulate", "--generate", "rq3", "--seed", "4"]).arg(&scenario));
    let out = run_ok(bin().arg("simulate").arg(&scenario));
    let o = json(&out.stdout);
    assert_eq!(o["detected_breaking"], true);
    assert_eq!(o["rank_of_truth"], 1);

    let out = run_ok(bin().arg("sweep").arg(&scenario).args(["--payloads", "0,1000000", "--trials", "2"]));
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "payload_uj,breaking_rate,mean_rank");
    assert_eq!(lines[1], "0,0,");
    assert!(lines[2].starts_with("1000000,1,1"), "{csv}");
}

/// Directory-per-commit "repository": each commit holds the simulated
/// spec, coverage and the diff from its parent.
fn history_repo(root: &std::path::Path, mutated: &[&str]) {
    let commits = ["c0", "c1", "c2", "c3"];
    for c in commits {
        let d = root.join(c);
        fs::create_dir_all(&d).unwrap();
        let base = if mutated.contains(&c) { 150.0 } else { 100.0 };
        // mutations are permanent: later commits keep the extra energy
        let idx = commits.iter().position(|x| *x == c).unwrap();
        let inherited = commits[..idx].iter().any(|p| mutated.contains(p));
        let a = if inherited { 150.0 } else { base };
        fs::write(
            d.join("sim.json"),
            format!(r#"{{"seed":1,"noise_rel":0.0,"per_test_base":{{"A":{{"energy_pkg_uj":{a}}},"B":{{"energy_pkg_uj":80}}}}}}"#),
        )
        .unwrap();
        fs::write(
            d.join("coverage.json"),
            r#"{"version":"v2","tests":{"A":{"src/x.rs":{"5":1}},"B":{"src/y.rs":{"1":1}}}}"#,
        )
        .unwrap();
        fs::write(
            d.join("change.diff"),
            "--- a/src/x.rs\n+++ b/src/x.rs\n@@ -5,1 +5,1 @@\n-old\n+new\n",
        )
        .unwrap();
    }
}

fn history_config(root: &std::path::Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "checkout": "test -d {repo}/{ref} && cp -r {repo}/{ref} {dest}",
        "diff": "cat {repo}/{to}/change.diff",
        "coverage": "cp {workspace}/coverage.json {output}",
        "command": "test -n {test_id}",
        "repetitions": 3,
        "warmup_runs": 0,
        "settle_ms": 0,
        "probe": { "simulated_workspace_file": "sim.json", "lock_path": root.join("lock") }
    });
    let p = root.join("history.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

#[test]
fn history_ratios_and_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    history_repo(&repo, &["c2"]);
    let cfg = history_config(dir.path());
    let list = dir.path().join("commits.txt");

    fs::write(&list, "c0\nc1\nc2\nc3\n").unwrap();
    let out = run_ok(bin().arg("history").arg("--repo").arg(&repo).arg("--commits").arg(&list).arg("--config").arg(&cfg));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(csv.lines().nth(2).unwrap().starts_with("c1,c2,breaking,1,50"), "{csv}");
    assert!(csv.ends_with("# breaking_ratio=0.3333 (1/3 evaluated, 0 errors)\n"), "{csv}");

    let clean = dir.path().join("clean");
    history_repo(&clean, &[]);
    let out = run_ok(bin().arg("history").arg("--repo").arg(&clean).arg("--commits").arg(&list).arg("--config").arg(&cfg));
    assert!(String::from_utf8(out.stdout).unwrap().contains("breaking_ratio=0.0000 (0/3"));

    fs::write(&list, "c0 c1\nnot-a-commit c2\nc2 c3\n").unwrap();
    let out = run_ok(bin().arg("history").arg("--repo").arg(&repo).arg("--commits").arg(&list).arg("--config").arg(&cfg));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[1].starts_with("c0,c1,not-breaking"), "{csv}");
    assert!(rows[2].starts_with("not-a-commit,c2,,,,"), "{csv}");
    assert!(rows[3].starts_with("c2,c3,not-breaking"), "{csv}");
    assert!(csv.contains("(0/2 evaluated, 1 errors)"), "{csv}");
}
