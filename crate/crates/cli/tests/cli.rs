//! The command line as a user drives it: exit codes, outputs and config
//! layering.

use std::path::Path;
use std::process::{Command, Output};

fn gsurf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsurf")).args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn body(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("runtime_sec");
    v
}

#[test]
fn passing_run_exits_zero_and_writes_report_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gsurf(&["density-check", "--n-paths", "50000", "--r=-1,-0.5", "--seed", "3"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = body(tmp.path());
    assert_eq!(v["experiment"], "density-check");
    assert_eq!(v["summary"]["n_checks"], 2);
    assert_eq!(v["summary"]["n_fail"], 0);
    assert_eq!(v["config"]["process"]["kind"], "bm");
    assert!(v["scheme"].as_str().unwrap().contains("xoshiro"));
    let rec = &v["results"][0];
    for key in ["identity_tag", "lhs", "lhs_se", "rhs", "rhs_se", "z_score", "pass", "oracle_refs"] {
        assert!(rec.get(key).is_some(), "missing {key}");
    }
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "experiment,process,r,eps,estimate,se,oracle,z_score,pass");
    // four shells and the extrapolation per level
    assert_eq!(lines.count(), 10);
}

#[test]
fn failed_identity_exits_one() {
    // the printed OU law of the minimum does not match simulation
    let tmp = tempfile::tempdir().unwrap();
    let o = gsurf(&["density-check", "--process", "ou", "--n-paths", "50000", "--r=-1"], tmp.path());
    assert_eq!(code(&o), 1);
    assert_eq!(body(tmp.path())["summary"]["n_fail"], 1);
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["ibp-halfspace", "--process", "ou", "--joint"],
        &["density-check", "--r", ""],
        &["shell-convergence", "--eps", ""],
        &["density-check", "--eps", "0.1,0.2"],
        &["limit", "--r=-0.1"],
        &["limit", "--process", "ou"],
        &["neumann", "--process", "bridge"],
        &["ibp-flat", "--process", "geometric"],
        &["lemma21", "--r", "0.5"],
        &["density-check", "--process", "brownian"],
        &["density-check", "--n-paths", "10"],
        &["neumann", "--k", "65"],
        &["no-such-experiment"],
    ];
    for args in cases {
        let o = gsurf(args, tmp.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = gsurf(&["ibp-halfspace", "--process", "ou", "--joint"], tmp.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("joint density"));
}

#[test]
fn config_file_sections_and_flags_layer_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[run]\nn_paths = 20000\nseed = 9\n\n[process]\nkind = \"bridge\"\n\n[params]\nr = [-0.5]\n\n[moments]\nr = [-0.75]\n\n[density-check]\nr = [-1.0, -0.5]\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = gsurf(&["density-check", "--config", cfg.to_str().unwrap(), "--seed", "4"], &out);
    assert!(code(&o) <= 1);
    let v = body(&out);
    assert_eq!(v["config"]["process"]["kind"], "bridge");
    assert_eq!(v["config"]["n_paths"], 20000);
    assert_eq!(v["seed"], 4);
    assert_eq!(v["config"]["r"], serde_json::json!([-1.0, -0.5]));

    std::fs::write(&cfg, "[run]\nn_paths = 20000\nthreads = 4\n").unwrap();
    let o = gsurf(&["density-check", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 2);
}

#[test]
fn identical_runs_are_identical_at_any_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, threads: &str| {
        let d = tmp.path().join(dir);
        let o = Command::new(env!("CARGO_BIN_EXE_gsurf"))
            .args(["ibp-flat", "--process", "bridge", "--n-paths", "20000", "--seed", "5", "--out"])
            .arg(&d)
            .env("GSURF_THREADS", threads)
            .output()
            .unwrap();
        assert!(code(&o) <= 1);
        serde_json::to_string(&body(&d)).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "4"));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gsurf"))
        .args(["moments", "--n-paths", "5000", "--out"])
        .arg(tmp.path())
        .env("GSURF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
