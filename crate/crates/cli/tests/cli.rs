use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const LASSO: &str = r#"{
    "problem": {"kind": "lasso", "random": {"dim": 6, "m": 9, "seed": 5}},
    "schedule": {"type": "quasicyclic", "K": 3},
    "solver": {"max_iters": 20000, "tol": 1e-9},
    "seed": 11
}"#;

fn blocksplit(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blocksplit"));
    cmd.args(args).env_remove("BLOCKSPLIT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn solve(dir: &Path, config: &Path, trace: &str, env: &[(&str, &str)]) -> (Output, PathBuf) {
    let trace = dir.join(trace);
    let out = blocksplit(
        &["solve", "--config", config.to_str().unwrap(), "--trace-out", trace.to_str().unwrap()],
        env,
    );
    (out, trace)
}

#[test]
fn solve_converges_and_writes_trace() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let (out, trace) = solve(dir.path(), &config, "trace.csv", &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["exit_code"], 0);
    assert!(summary["final_residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(summary["k"], 3);
    let csv = fs::read_to_string(trace).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n,residual,step,err0,errsum,block,dist_ref");
}

#[test]
fn regression_data_resolves_next_to_the_config() {
    let dir = TempDir::new().unwrap();
    let rows = "1,0,1\n0,1,2\n1,1,2.5\n2,1,4\n";
    write(dir.path(), "data.csv", rows);
    let config = write(
        dir.path(),
        "ls.json",
        r#"{"problem": {"kind": "least_squares", "data": "data.csv"},
            "schedule": {"kind": "cyclic", "block_size": 2},
            "solver": {"max_iters": 50000, "tol": 1e-11}}"#,
    );
    let (out, _) = solve(dir.path(), &config, "t.csv", &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_byte_identical_with_any_thread_cap() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let (a, ta) = solve(dir.path(), &config, "a.csv", &[]);
    let (b, tb) = solve(dir.path(), &config, "b.csv", &[]);
    let (c, tc) = solve(dir.path(), &config, "c.csv", &[("BLOCKSPLIT_THREADS", "4")]);
    for out in [&a, &b, &c] {
        assert_eq!(code(out), 0);
    }
    let first = fs::read(ta).unwrap();
    assert_eq!(first, fs::read(tb).unwrap());
    assert_eq!(first, fs::read(tc).unwrap());
}

#[test]
fn seed_override_changes_the_schedule() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let (_, ta) = solve(dir.path(), &config, "a.csv", &[]);
    let tb = dir.path().join("b.csv");
    let out = blocksplit(
        &["solve", "--config", config.to_str().unwrap(), "--trace-out", tb.to_str().unwrap(), "--seed", "12"],
        &[],
    );
    assert_eq!(code(&out), 0);
    assert_ne!(fs::read(ta).unwrap(), fs::read(tb).unwrap());
}

#[test]
fn iteration_cap_exits_1() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let out = blocksplit(&["solve", "--config", config.to_str().unwrap(), "--max-iters", "5"], &[]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["iterations"], 5);
}

#[test]
fn tolerance_override_is_applied() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let out = blocksplit(&["solve", "--config", config.to_str().unwrap(), "--tol", "1e-3"], &[]);
    assert_eq!(code(&out), 0);
    let s = stdout_json(&out);
    assert_eq!(s["tol"].as_f64(), Some(1e-3));
    assert!(s["final_residual"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn short_covering_constant_exits_3() {
    let dir = TempDir::new().unwrap();
    let config = write(
        dir.path(),
        "bad.json",
        r#"{"problem": {"kind": "least_squares", "random": {"dim": 2, "m": 3, "seed": 1}},
            "schedule": {"type": "cyclic", "block_size": 1, "K": 2}}"#,
    );
    let out = blocksplit(&["solve", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let out = blocksplit(&["schedule-check", "--config", config.to_str().unwrap(), "--horizon", "50"], &[]);
    assert_eq!(code(&out), 3);
    assert_eq!(stdout_json(&out)["covering_ok"], false);
}

#[test]
fn schedule_check_passes_on_a_covering_schedule() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let out = blocksplit(&["schedule-check", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    let report = stdout_json(&out);
    assert_eq!(report["concentrating_ok"], true);
    assert_eq!(report["horizon"], 1000);
}

#[test]
fn bad_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = write(
        dir.path(),
        "missing.json",
        r#"{"problem": {"kind": "lasso", "data": "not_there.csv"}}"#,
    );
    let malformed = write(dir.path(), "malformed.json", "{\"problem\": ");
    let nowhere = dir.path().join("nowhere.json");
    for path in [&missing, &malformed, &nowhere] {
        let out = blocksplit(&["solve", "--config", path.to_str().unwrap()], &[]);
        assert_eq!(code(&out), 2, "{}", path.display());
        assert!(!out.stderr.is_empty());
    }
    let good = write(dir.path(), "lasso.json", LASSO);
    let out = blocksplit(&["solve", "--config", good.to_str().unwrap()], &[("BLOCKSPLIT_THREADS", "0")]);
    assert_eq!(code(&out), 2);
    let out = blocksplit(&["solve", "--config", good.to_str().unwrap(), "--bogus"], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn audit_replay_matches_the_summary() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let (out, trace) = solve(dir.path(), &config, "trace.csv", &[]);
    assert_eq!(code(&out), 0);
    let summary = stdout_json(&out);
    let replay = blocksplit(
        &["audit", "--trace", trace.to_str().unwrap(), "--config", config.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&replay), 0, "{}", String::from_utf8_lossy(&replay.stderr));
    let verdicts = stdout_json(&replay);
    assert_eq!(verdicts, summary["audits"]);
    assert_eq!(verdicts["fejer"]["passed"], true);
}

#[test]
fn audit_flags_a_tampered_trace() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "lasso.json", LASSO);
    let (_, trace) = solve(dir.path(), &config, "trace.csv", &[]);
    let csv = fs::read_to_string(&trace).unwrap();
    // Inflate one reference distance well past the audit tolerance.
    let tampered: Vec<String> = csv
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i != 30 {
                return line.to_string();
            }
            let mut fields: Vec<String> = line.split(',').map(str::to_string).collect();
            let d: f64 = fields[6].parse().unwrap();
            fields[6] = format!("{:?}", 10.0 * d + 1.0);
            fields.join(",")
        })
        .collect();
    fs::write(&trace, tampered.join("\n") + "\n").unwrap();
    let out = blocksplit(
        &["audit", "--trace", trace.to_str().unwrap(), "--config", config.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)["fejer"]["passed"], false);
}

#[test]
fn shipped_configs_run_with_their_documented_exit_codes() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = TempDir::new().unwrap();
    let expected = [
        ("lasso_quasicyclic.json", 0),
        ("least_squares_cyclic.json", 0),
        ("feasibility_halfspaces.json", 0),
        ("short_covering.json", 3),
    ];
    for (name, want) in expected {
        // Copy so that outputs named in the config land in the temp dir.
        let config = write(dir.path(), name, &fs::read_to_string(root.join(name)).unwrap());
        let out = blocksplit(&["solve", "--config", config.to_str().unwrap()], &[]);
        assert_eq!(code(&out), want, "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.path().join("lasso_trace.csv").exists());
    assert!(dir.path().join("lasso_summary.json").exists());
}
