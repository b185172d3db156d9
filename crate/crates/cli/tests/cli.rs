//! End-to-end checks of the command-line interface: exit codes, validation
//! order, and seeded determinism of every artifact.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_earlystop"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn small_config(dir: &Path, n_experiments: usize, episodes: usize) -> std::path::PathBuf {
    let path = dir.join("config.json");
    write(
        &path,
        &format!(
            r#"{{
  "seed": 4242,
  "dgp": {{ "n_experiments": {n_experiments}, "customers_per_experiment": 1500 }},
  "training": {{ "episodes": {episodes}, "hidden_widths": [16], "learning_rate": 0.002 }},
  "methods": [ {{"id": "ffht"}}, {{"id": "bf", "threshold": 3}}, {{"id": "rl"}} ],
  "replications_per_experiment": 3
}}"#
        ),
    );
    path
}

#[test]
fn simulate_is_deterministic_and_validates_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 12, 50);

    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out1.join("cohort.json")).unwrap();
    let b = std::fs::read(out2.join("cohort.json")).unwrap();
    assert_eq!(a, b);

    // Zero experiments: validation error, exit 1, no output file.
    let bad = dir.path().join("bad.json");
    write(
        &bad,
        r#"{"seed": 1, "dgp": {"n_experiments": 0}, "methods": []}"#,
    );
    let out3 = dir.path().join("c");
    let output = bin()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(&out3)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("n_experiments"));
    assert!(!out3.join("cohort.json").exists());
}

#[test]
fn seed_override_changes_the_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 8, 50);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out1)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out2)
        .args(["--seed", "9"])
        .status()
        .unwrap()
        .success());
    let a = std::fs::read(out1.join("cohort.json")).unwrap();
    let b = std::fs::read(out2.join("cohort.json")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn train_evaluate_slice_recommend_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 12, 60);
    let out = dir.path().join("out");
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let cohort = out.join("cohort.json");

    // Training twice produces identical checkpoints and a full curve.
    let t1 = dir.path().join("t1");
    let t2 = dir.path().join("t2");
    for t in [&t1, &t2] {
        assert!(bin()
            .args(["train", "--config"])
            .arg(&config)
            .arg("--cohort")
            .arg(&cohort)
            .arg("--out")
            .arg(t)
            .status()
            .unwrap()
            .success());
    }
    assert_eq!(
        std::fs::read(t1.join("policy.json")).unwrap(),
        std::fs::read(t2.join("policy.json")).unwrap()
    );
    let curve = std::fs::read_to_string(t1.join("training_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 61, "header plus one row per episode");
    assert!(curve.starts_with("episode,return\n"));

    // Evaluating without a policy while "rl" is configured: validation error.
    let output = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .arg("--cohort")
        .arg(&cohort)
        .arg("--out")
        .arg(dir.path().join("e0"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("rl"));

    // Full evaluation writes the report; ffht always runs the horizon.
    let e1 = dir.path().join("e1");
    assert!(bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .arg("--cohort")
        .arg(&cohort)
        .arg("--policy")
        .arg(t1.join("policy.json"))
        .arg("--out")
        .arg(&e1)
        .status()
        .unwrap()
        .success());
    let rows =
        earlystop::report::metrics_from_csv(&std::fs::read_to_string(e1.join("metrics.csv")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 3);
    let ffht = rows.iter().find(|r| r.method == "ffht").unwrap();
    assert_eq!(ffht.avg_weeks, 4.0);

    // Slice: grid CSV with axis values, deterministic, unknown field errors.
    let ctx_path = dir.path().join("ctx.json");
    let cohort_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cohort).unwrap()).unwrap();
    write(&ctx_path, &cohort_json[0]["ctx"].to_string());
    let axes_path = dir.path().join("axes.json");
    write(
        &axes_path,
        r#"{"week": 2, "w_bar_tr": 0.0, "w_bar_c": 0.0,
            "axis1": {"field": "delta_post_mean", "values": [-1.0, 0.0, 1.0]},
            "axis2": {"field": "weekly_cost", "values": [100000.0, 1000.0]}}"#,
    );
    let s1 = bin()
        .args(["slice", "--policy"])
        .arg(t1.join("policy.json"))
        .arg("--context")
        .arg(&ctx_path)
        .arg("--axes")
        .arg(&axes_path)
        .arg("--out")
        .arg(dir.path().join("s1"))
        .output()
        .unwrap();
    assert!(s1.status.success());
    let s2 = bin()
        .args(["slice", "--policy"])
        .arg(t1.join("policy.json"))
        .arg("--context")
        .arg(&ctx_path)
        .arg("--axes")
        .arg(&axes_path)
        .arg("--out")
        .arg(dir.path().join("s2"))
        .output()
        .unwrap();
    assert_eq!(s1.stdout, s2.stdout);
    let grid_csv = std::fs::read_to_string(dir.path().join("s1").join("slice.csv")).unwrap();
    assert!(grid_csv.starts_with("delta_post_mean\\weekly_cost,"));
    assert_eq!(grid_csv.lines().count(), 4);

    let bad_axes = dir.path().join("bad_axes.json");
    write(
        &bad_axes,
        r#"{"week": 2, "axis1": {"field": "nonsense", "values": [0.0]},
            "axis2": {"field": "weekly_cost", "values": [1.0]}}"#,
    );
    let s3 = bin()
        .args(["slice", "--policy"])
        .arg(t1.join("policy.json"))
        .arg("--context")
        .arg(&ctx_path)
        .arg("--axes")
        .arg(&bad_axes)
        .arg("--out")
        .arg(dir.path().join("s3"))
        .output()
        .unwrap();
    assert_eq!(s3.status.code(), Some(1));
    let err = String::from_utf8_lossy(&s3.stderr);
    assert!(err.contains("nonsense") && err.contains("weekly_cost"), "{err}");

    // Recommend: masked at the horizon, JSON mode parses, terminated noted.
    let obs = dir.path().join("obs.json");
    write(&obs, r#"{"week": 4, "w_bar_tr": 5.0, "w_bar_c": -5.0}"#);
    let r = bin()
        .args(["recommend", "--policy"])
        .arg(t1.join("policy.json"))
        .arg("--context")
        .arg(&ctx_path)
        .arg("--observations")
        .arg(&obs)
        .arg("--json")
        .output()
        .unwrap();
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_ne!(v["action"], "continue");
    assert!(v["q_values"].as_array().unwrap().len() == 3);

    let obs_term = dir.path().join("obs_term.json");
    write(
        &obs_term,
        r#"{"week": 2, "w_bar_tr": 0.0, "w_bar_c": 0.0, "terminated": true}"#,
    );
    let r = bin()
        .args(["recommend", "--policy"])
        .arg(t1.join("policy.json"))
        .arg("--context")
        .arg(&ctx_path)
        .arg("--observations")
        .arg(&obs_term)
        .output()
        .unwrap();
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("terminated"));

    // Malformed observations: validation error.
    let obs_bad = dir.path().join("obs_bad.json");
    write(&obs_bad, r#"{"week": "two"}"#);
    let r = bin()
        .args(["recommend", "--policy"])
        .arg(t1.join("policy.json"))
        .arg("--context")
        .arg(&ctx_path)
        .arg("--observations")
        .arg(&obs_bad)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn divergent_training_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(
        &config,
        r#"{
  "seed": 7,
  "dgp": { "n_experiments": 6, "customers_per_experiment": 1500 },
  "training": { "episodes": 500, "hidden_widths": [16], "learning_rate": 1e9 },
  "methods": [ {"id": "ffht"} ]
}"#,
    );
    let out = dir.path().join("out");
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let r = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--cohort")
        .arg(out.join("cohort.json"))
        .arg("--out")
        .arg(dir.path().join("t"))
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2), "divergence is a runtime error");
    assert!(String::from_utf8_lossy(&r.stderr).contains("diverged"));
}

#[test]
fn usage_errors_exit_one() {
    let r = bin().args(["simulate"]).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    let r = bin().args(["no-such-command"]).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    let r = bin().args(["--help"]).output().unwrap();
    assert_eq!(r.status.code(), Some(0));
}
