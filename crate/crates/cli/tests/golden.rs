//! Runs the binary and compares stdout with files under `tests/golden/`.
//! `UPDATE_GOLDEN=1 cargo test -p ptcache-cli` rewrites them.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ptcache"));
    cmd.env("PT_CACHE_THREADS", "2");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, args: &[&str], code: i32) {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: stderr {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, &out.stdout).unwrap();
        return;
    }
    let want = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(
        out.stdout == want,
        "{args:?} differs from {name}:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

fn stdout_json(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| {
        panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr))
    })
}

#[test]
fn design_goldens() {
    check_golden("design_thm1_k6_tbar2.json", &["design", "--thm", "1", "--K", "6", "--tbar", "2"], 0);
    check_golden(
        "design_thm1_k8_tbar4_fallback.json",
        &["design", "--thm", "1", "--K", "8", "--tbar", "4", "--variant", "fallback"],
        0,
    );
    check_golden("design_thm2_k8_t4.json", &["design", "--thm", "2", "--K", "8", "--t", "4"], 0);
    check_golden("design_thm3_m3_q4_t2.json", &["design", "--thm", "3", "--m", "3", "--q", "4", "--t", "2"], 0);
    check_golden("design_jcm_k4_t2.json", &["design", "--jcm", "--K", "4", "--t", "2"], 0);
    check_golden("design_special_k5t3.json", &["design", "--special", "k5-t3"], 0);
    check_golden("design_special_tbar3_k9.json", &["design", "--special", "tbar3", "--K", "9", "--N", "3", "--M", "2"], 0);
    check_golden("design_special_t3_halves_k8.json", &["design", "--special", "t3-halves", "--K", "8"], 0);
    check_golden("design_special_odd_k7.json", &["design", "--special", "odd-k", "--K", "7"], 0);
    check_golden("design_special_lemma2_k6_q3.json", &["design", "--special", "lemma2", "--K", "6", "--q", "3"], 0);
    check_golden("design_dpda_t2_k6.json", &["design", "--dpda", "t2", "--K", "6"], 0);
    check_golden("design_dpda_tkm2_k7.json", &["design", "--dpda", "tkm2", "--K", "7"], 0);
}

#[test]
fn design_spot_values() {
    let f = |args: &[&str]| stdout_json(args)["F_PT"].as_u64().unwrap();
    assert_eq!(f(&["design", "--thm", "1", "--K", "6", "--tbar", "2"]), 12);
    assert_eq!(f(&["design", "--jcm", "--K", "4", "--t", "2"]), 12);
    assert_eq!(f(&["design", "--thm", "3", "--m", "3", "--q", "4", "--t", "2"]), 96);
}

#[test]
fn design_plan_round_trip_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    let p = path.to_str().unwrap();
    let out = run(&["design", "--thm", "2", "--K", "6", "--t", "2", "-o", p]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let written = fs::read(&path).unwrap();
    let again = run(&["design", "--plan", p]);
    assert!(again.status.success());
    assert_eq!(again.stdout, written);
}

#[test]
fn analyze_goldens() {
    check_golden("analyze_k4_tbar2.json", &["analyze", "--thm", "1", "--K", "4", "--tbar", "2"], 0);
    check_golden(
        "analyze_tbar3_k9.csv",
        &["analyze", "--special", "tbar3", "--K", "9", "--N", "3", "--M", "2", "--format", "csv"],
        0,
    );
}

#[test]
fn simulate_goldens() {
    check_golden(
        "simulate_k4_demand_1112.json",
        &["simulate", "--thm", "1", "--K", "4", "--tbar", "2", "--demand", "1,1,1,2"],
        0,
    );
    check_golden(
        "simulate_tbar3_k9_random100.json",
        &["simulate", "--special", "tbar3", "--K", "9", "--N", "3", "--M", "2", "--demands", "100"],
        0,
    );
    check_golden("simulate_jcm_k3_t2.json", &["simulate", "--jcm", "--K", "3", "--t", "2", "--demands", "all"], 0);
}

#[test]
fn simulate_transcript_is_seed_determined() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let go = |seed: &str, file: &str| {
        let out = run(&[
            "simulate", "--jcm", "--K", "3", "--t", "1", "--demand", "1,2,3", "--seed", seed,
            "--bytes-per-packet", "4", "--transcript", &path(file),
        ]);
        assert!(out.status.success());
        (out.stdout, fs::read(path(file)).unwrap())
    };
    let a = go("7", "a.jsonl");
    let b = go("7", "b.jsonl");
    let c = go("8", "c.jsonl");
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);
    // Only payload bytes depend on the seed.
    let strip = |bytes: &[u8]| -> Vec<serde_json::Value> {
        String::from_utf8_lossy(bytes)
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("payload_hex");
                v
            })
            .collect()
    };
    assert_eq!(strip(&a.1), strip(&c.1));
    let first: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&a.1).lines().next().unwrap()).unwrap();
    for key in ["tx", "group", "rx", "counter_snapshot", "payload_hex"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn search_goldens() {
    check_golden("search_k4_t2.csv", &["search", "--K", "4", "--t", "2"], 0);
    check_golden("search_k5_t3.json", &["search", "--K", "5", "--t", "3", "--format", "json"], 0);
    check_golden(
        "search_k6_t4_grouping.json",
        &["search", "--K", "6", "--t", "4", "--grouping", "2,2,2", "--grouping", "3,3", "--format", "json"],
        0,
    );
}

#[test]
fn search_budget_marks_partial() {
    let v = stdout_json(&["search", "--K", "5", "--t", "2", "--max-candidates", "1", "--no-prune", "--format", "json"]);
    assert_eq!(v["partial"], true);
}

#[test]
fn sweep_goldens() {
    check_golden("sweep_thm1.csv", &["sweep", "--family", "thm1", "--tbar", "2,4,6,8", "--K", "4..40"], 0);
    check_golden("sweep_thm2_case1.csv", &["sweep", "--family", "thm2", "--t", "2,4,6,8", "--K", "4..40"], 0);
    check_golden("sweep_thm2_case2.csv", &["sweep", "--family", "thm2", "--t", "6,8,10,12", "--K", "4..40"], 0);
    check_golden("sweep_thm3_m3.json", &["sweep", "--family", "thm3", "--m", "3", "--t", "2", "--K", "9..18", "--format", "json"], 0);
    check_golden("sweep_t3_halves.csv", &["sweep", "--family", "t3-halves", "--K", "8..16"], 0);
}

#[test]
fn infeasible_design_exits_2_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"K":4,"N":2,"M":1,"grouping":[3,1],"tx_rules":{"2,1|0":[0,1],"3|0":[0],"2|1":[0,1]}}"#,
    )
    .unwrap();
    let out = run(&["design", "--plan", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["schema_version"], 1);
    assert_eq!(err["error"]["kind"], "infeasible_design");
    assert!(err["error"]["stage"].is_string());
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_arguments_exit_4() {
    let cases: &[&[&str]] = &[
        &["design", "--K", "4"],
        &["design", "--thm", "1", "--K", "5", "--tbar", "2"],
        &["design", "--thm", "1", "--K", "6", "--tbar", "2", "--N", "4", "--M", "3"],
        &["design", "--thm", "4", "--K", "6"],
        &["design", "--jcm", "--K", "4", "--t", "2", "--format", "csv"],
        &["simulate", "--jcm", "--K", "3", "--t", "1", "--demand", "1,2"],
        &["simulate", "--jcm", "--K", "3", "--t", "1", "--demands", "many"],
        &["search", "--K", "9", "--t", "2"],
        &["sweep", "--family", "thm1", "--K", "4..10"],
        &["sweep", "--family", "thm1", "--tbar", "2", "--K", "10..4"],
        &["bogus"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(4), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["design", "--thm", "1", "--K", "5", "--tbar", "2"]);
    assert_eq!(stderr_json(&out)["error"]["kind"], "bad_arguments");
}

#[test]
fn help_and_version_exit_0() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
    assert!(run(&["sweep", "--help"]).status.success());
}
