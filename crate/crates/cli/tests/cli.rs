//! End-to-end tests of the `ehsgd` binary: exit codes, output files,
//! reproducibility, seed plumbing, sweeps, presets, and verifier suites.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ehsgd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ehsgd"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const BASE_CONFIG: &str = r#"{
    "N": 4, "horizon": 120, "policy": "alg1", "eta": 0.05, "seed": 7,
    "arrival_periods": [1, 5, 10, 20],
    "objective": {"kind": "logistic", "dim": 4, "points_per_user": 8,
                  "mode": "group_label_skew", "data_seed": 11}
}"#;

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn single_run_writes_outputs_and_reruns_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BASE_CONFIG);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let status = ehsgd()
            .args(["--config"])
            .arg(&cfg)
            .arg("--output")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv_a = fs::read(out_a.join("metrics.csv")).unwrap();
    let csv_b = fs::read(out_b.join("metrics.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let header = String::from_utf8_lossy(&csv_a)
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        header,
        "iteration,global_loss,loss_gap,num_participants,energy_spent,energy_wasted"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policy"], "alg1");
    assert_eq!(summary["seed"], 7);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["derived"]["grad_norm_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn manifest_rerun_reproduces_metrics_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BASE_CONFIG);
    let first = tmp.path().join("first");
    assert!(ehsgd()
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(&first)
        .status()
        .unwrap()
        .success());

    let second = tmp.path().join("second");
    assert!(ehsgd()
        .arg("--config")
        .arg(first.join("manifest.json"))
        .arg("--output")
        .arg(&second)
        .status()
        .unwrap()
        .success());
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn env_seed_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BASE_CONFIG);
    let via_env = tmp.path().join("env");
    assert!(ehsgd()
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(&via_env)
        .env("EHSGD_SEED", "99")
        .status()
        .unwrap()
        .success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(via_env.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 99);

    let cfg99 = write_config(
        tmp.path(),
        "cfg99.json",
        &BASE_CONFIG.replace("\"seed\": 7", "\"seed\": 99"),
    );
    let via_cfg = tmp.path().join("cfg99");
    assert!(ehsgd()
        .arg("--config")
        .arg(&cfg99)
        .arg("--output")
        .arg(&via_cfg)
        .status()
        .unwrap()
        .success());
    assert_eq!(
        fs::read(via_env.join("metrics.csv")).unwrap(),
        fs::read(via_cfg.join("metrics.csv")).unwrap()
    );

    let bad = ehsgd()
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(tmp.path().join("bad"))
        .env("EHSGD_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn invalid_configs_exit_2_with_field_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let beta_zero = write_config(
        tmp.path(),
        "beta0.json",
        r#"{
            "N": 2, "horizon": 50, "policy": "best_effort", "eta": 0.1, "seed": 1,
            "arrivals": [{"kind": "bernoulli", "beta": 0.0}],
            "objective": {"kind": "quadratic", "dim": 2, "points_per_user": 3}
        }"#,
    );
    let out = ehsgd()
        .arg("--config")
        .arg(&beta_zero)
        .arg("--output")
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("arrivals[0].beta"),
        "{}",
        stderr_of(&out)
    );

    let incompatible = write_config(
        tmp.path(),
        "incompatible.json",
        r#"{
            "N": 2, "horizon": 50, "policy": "alg1", "eta": 0.1, "seed": 1,
            "arrivals": [{"kind": "bernoulli", "beta": 0.5}],
            "objective": {"kind": "quadratic", "dim": 2, "points_per_user": 3}
        }"#,
    );
    let out = ehsgd()
        .arg("--config")
        .arg(&incompatible)
        .arg("--output")
        .arg(tmp.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("policy"), "{}", stderr_of(&out));

    let malformed = write_config(tmp.path(), "broken.json", "{ not json");
    let out = ehsgd()
        .arg("--config")
        .arg(&malformed)
        .arg("--output")
        .arg(tmp.path().join("z"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let missing = ehsgd()
        .arg("--config")
        .arg(tmp.path().join("does-not-exist.json"))
        .arg("--output")
        .arg(tmp.path().join("w"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    // No mode flag at all.
    let out = ehsgd().arg("--output").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Unknown verifier suite.
    let out = ehsgd().args(["--verify", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Unknown preset.
    let out = ehsgd()
        .args(["--preset", "nonsense", "--output"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Run without --output.
    let cfg = write_config(tmp.path(), "cfg.json", BASE_CONFIG);
    let out = ehsgd().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn policy_override_is_applied_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BASE_CONFIG);
    let out_dir = tmp.path().join("naive");
    assert!(ehsgd()
        .arg("--config")
        .arg(&cfg)
        .args(["--policy", "naive", "--output"])
        .arg(&out_dir)
        .status()
        .unwrap()
        .success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["policy"], "naive");

    let out = ehsgd()
        .arg("--config")
        .arg(&cfg)
        .args(["--policy", "bogus", "--output"])
        .arg(tmp.path().join("q"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_sweep_writes_per_seed_dirs_and_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BASE_CONFIG);
    let out_dir = tmp.path().join("sweep");
    assert!(ehsgd()
        .arg("--config")
        .arg(&cfg)
        .args(["--seeds", "3..5", "--jobs", "2", "--output"])
        .arg(&out_dir)
        .status()
        .unwrap()
        .success());
    for seed in 3..=5 {
        assert!(out_dir
            .join(format!("seed-{seed:04}"))
            .join("metrics.csv")
            .exists());
    }
    let agg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("aggregate_summary.json")).unwrap())
            .unwrap();
    assert_eq!(agg["runs"], 3);
    assert_eq!(agg["seeds"], "3..5");
    assert!(agg["final_loss"]["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn dump_data_writes_dataset_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", BASE_CONFIG);
    let out_dir = tmp.path().join("dump");
    assert!(ehsgd()
        .arg("--config")
        .arg(&cfg)
        .arg("--dump-data")
        .arg("--output")
        .arg(&out_dir)
        .status()
        .unwrap()
        .success());
    let data = fs::read_to_string(out_dir.join("dataset.csv")).unwrap();
    let mut lines = data.lines();
    assert_eq!(lines.next().unwrap(), "user_id,x0,x1,x2,x3,label");
    assert_eq!(lines.count(), 4 * 8);
}

#[test]
fn verify_suite_writes_reports_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ehsgd()
        .args(["--verify", "participation", "--output"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    let reports: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("verify_participation.json")).unwrap(),
    )
    .unwrap();
    let arr = reports.as_array().unwrap();
    assert_eq!(arr.len(), 6);
    for r in arr {
        assert_eq!(r["pass"], true);
        for key in ["test", "estimate", "target", "stderr", "pass"] {
            assert!(r.get(key).is_some());
        }
    }
}

#[test]
fn preset_runs_all_four_policies() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sec5");
    let out = ehsgd()
        .args(["--preset", "paper-sec5", "--seeds", "1..1", "--output"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    for policy in ["full", "alg1", "naive", "wait_for_all"] {
        assert!(out_dir
            .join(policy)
            .join("seed-0001")
            .join("metrics.csv")
            .exists());
    }
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("comparison.json")).unwrap())
            .unwrap();
    assert_eq!(cmp["preset"], "paper-sec5");
    for policy in ["full", "alg1", "naive", "wait_for_all"] {
        assert!(
            cmp["policies"][policy]["final_loss"]["mean"]
                .as_f64()
                .unwrap()
                > 0.0
        );
    }
}
