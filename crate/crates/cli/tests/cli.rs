use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use veilkit::data::JointSpec;

fn veilkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_veilkit"))
        .args(args)
        .current_dir(cwd)
        .env_remove("VEILKIT_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn adult_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn quick() -> Value {
    json!({"lr": 0.05, "epochs": 8, "batch_size": 32})
}

fn leaky() -> Value {
    json!({"kind": "synth-leaky", "leaky": {"thresholds": [0.2, -0.3], "target_noise": 1.2}, "train_size": 600, "seed": 9})
}

/// `A` is a function of `X`; `Y` is a noisy function of it.
fn attr_copy() -> Value {
    let joint = JointSpec::from_fn(4, 1, |x, y, a| {
        let py = if usize::from(y) == x / 2 { 0.8 } else { 0.2 };
        if usize::from(a[0]) == x % 2 { 0.25 * py } else { 0.0 }
    })
    .unwrap();
    json!({"kind": "synth-joint", "joint": joint, "train_size": 1000, "seed": 3})
}

fn experiment(dataset: Value, defense: Value, reps: usize) -> Value {
    json!({
        "dataset": dataset,
        "defense": defense,
        "target": {"hidden": [16], "train": quick()},
        "pool": [{"hidden": [], "train": quick()}, {"hidden": [16], "train": quick()}],
        "repetitions": reps,
        "seeds": (0..reps).collect::<Vec<_>>(),
    })
}

fn grl(lambda: f64) -> Value {
    json!({"method": "grl", "params": {
        "lambda": lambda, "feature_widths": [16, 8], "adversary_hidden": [16],
        "train": {"lr": 0.01, "epochs": 10, "batch_size": 32},
        "adversary_train": {"lr": 0.1, "momentum": 0.0, "epochs": 10, "batch_size": 32},
    }})
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn prepare_prints_adult_gender_counts() {
    let tmp = TempDir::new().unwrap();
    let data = adult_dir();
    let args = ["prepare", "--attr", "gender", "--data-dir", data.to_str().unwrap(), "--out", "cache"];
    let first = veilkit(&args, tmp.path());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let text = stdout(&first);
    for row in ["A=0    20988     9539", "A=1    13026     1669", "train 24130 / val 6032 / test 15060, 113 features"] {
        assert!(text.contains(row), "{text}");
    }
    let again = veilkit(&args, tmp.path());
    assert_eq!(stdout(&again), text, "rerun changes the cache hash");
}

#[test]
fn prepare_reports_missing_files() {
    let tmp = TempDir::new().unwrap();
    let o = veilkit(&["prepare", "--attr", "age", "--data-dir", "missing"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("adult.data"));
}

#[test]
fn train_writes_maps_and_repeats_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_json(tmp.path(), "cfg.json", &experiment(leaky(), grl(3.0), 2));
    let o = veilkit(&["train", "--config", &cfg, "--out", "a"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&veilkit(&["train", "--config", &cfg, "--out", "b", "--jobs", "2"], tmp.path())), 0);
    for f in ["report.json", "featuremap-seed0.json", "featuremap-seed1.json"] {
        let (a, b) = (fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
        assert!(a == b, "{f} differs between runs");
    }
    let r = report(&tmp.path().join("a"));
    assert_eq!(r["method"], "grl");
    assert_eq!(r["repetitions"].as_array().unwrap().len(), 2);

    assert_eq!(code(&veilkit(&["train", "--config", &cfg, "--out", "c", "--seed", "7"], tmp.path())), 0);
    let seeds: Vec<u64> = report(&tmp.path().join("c"))["repetitions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [7, 8]);
    assert!(tmp.path().join("c/featuremap-seed8.json").exists());
}

#[test]
fn train_csv_has_one_row_per_seed_and_attribute() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_json(tmp.path(), "cfg.json", &experiment(leaky(), json!({"method": "no-def"}), 2));
    assert_eq!(code(&veilkit(&["train", "--config", &cfg, "--out", "o", "--format", "csv"], tmp.path())), 0);
    let text = fs::read_to_string(tmp.path().join("o/report.csv")).unwrap();
    assert!(text.starts_with("schema_version,method,tradeoff,dataset,seed,attribute,"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn bad_configs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let mut typo = experiment(leaky(), json!({"method": "no-def"}), 1);
    typo["repetitons"] = json!(1);
    let no_lambda = experiment(leaky(), json!({"method": "grl", "params": {"feature_widths": [4]}}), 1);
    let unknown_method = experiment(leaky(), json!({"method": "grl-v2", "params": {"lambda": 1.0}}), 1);
    for (i, cfg) in [typo, no_lambda, unknown_method].iter().enumerate() {
        let path = write_json(tmp.path(), &format!("bad{i}.json"), cfg);
        let o = veilkit(&["train", "--config", &path, "--out", "o"], tmp.path());
        assert_eq!(code(&o), 2, "config {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&veilkit(&["train"], tmp.path())), 2);
    assert_eq!(code(&veilkit(&["frobnicate"], tmp.path())), 2);
    assert_eq!(code(&veilkit(&["train", "--jobs", "0", "--config", "x"], tmp.path())), 2);
}

#[test]
fn divergent_training_exits_3() {
    let tmp = TempDir::new().unwrap();
    let defense = json!({"method": "grl", "params": {
        "lambda": 1.0, "feature_widths": [16], "train": {"lr": 1e12, "momentum": 0.0, "epochs": 3, "batch_size": 32},
    }});
    let cfg = write_json(tmp.path(), "cfg.json", &experiment(leaky(), defense, 1));
    let o = veilkit(&["train", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn zero_lambda_grl_matches_no_defense_utility() {
    let tmp = TempDir::new().unwrap();
    let a = write_json(tmp.path(), "a.json", &experiment(leaky(), grl(0.0), 3));
    let b = write_json(tmp.path(), "b.json", &experiment(leaky(), json!({"method": "no-def"}), 3));
    assert_eq!(code(&veilkit(&["train", "--config", &a, "--out", "a"], tmp.path())), 0);
    assert_eq!(code(&veilkit(&["train", "--config", &b, "--out", "b"], tmp.path())), 0);
    let util = |d: &str| report(&tmp.path().join(d))["summary"]["utility"]["mean"].as_f64().unwrap();
    assert!((util("a") - util("b")).abs() <= 0.03, "{} vs {}", util("a"), util("b"));
}

fn attack_json(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("attack.json")).unwrap()).unwrap()
}

#[test]
fn attack_sees_through_identity_and_not_through_constants() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_json(tmp.path(), "cfg.json", &experiment(attr_copy(), json!({"method": "no-def"}), 1));
    assert_eq!(code(&veilkit(&["train", "--config", &cfg, "--out", "t"], tmp.path())), 0);
    let atk = write_json(
        tmp.path(),
        "atk.json",
        &json!({"dataset": attr_copy(), "pool": [{"hidden": [], "train": quick()}, {"hidden": [16], "train": quick()}]}),
    );
    let o = veilkit(&["attack", "--featuremap", "t/featuremap-seed0.json", "--config", &atk, "--out", "id"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("certificate a1:"), "{}", stdout(&o));
    let r = &attack_json(&tmp.path().join("id"))["attributes"][0]["attack"];
    assert!(r["max_accuracy"].as_f64().unwrap() > 0.99, "{r}");
    assert!(r["min_fnr_fpr"].as_f64().unwrap() < 0.02, "{r}");

    let constant = json!({
        "kind": {"kind": "linear", "projection": {"rows": 1, "cols": 4, "data": [0.0, 0.0, 0.0, 0.0]}, "mean": [0.0, 0.0, 0.0, 0.0]},
        "in_dim": 4, "out_dim": 1, "provenance": {"method": "pca", "config": null, "seed": 0},
    });
    let map = write_json(tmp.path(), "const.json", &constant);
    let o = veilkit(&["attack", "--featuremap", &map, "--config", &atk, "--out", "c"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = &attack_json(&tmp.path().join("c"))["attributes"][0]["attack"];
    assert!((r["max_accuracy"].as_f64().unwrap() - r["majority"].as_f64().unwrap()).abs() < 1e-12, "{r}");

    // a map fitted on the 3-column leaky data cannot read 4 one-hot columns
    let leaky_cfg = write_json(tmp.path(), "leaky.json", &experiment(leaky(), json!({"method": "no-def"}), 1));
    assert_eq!(code(&veilkit(&["train", "--config", &leaky_cfg, "--out", "l"], tmp.path())), 0);
    let o = veilkit(&["attack", "--featuremap", "l/featuremap-seed0.json", "--config", &atk, "--out", "x"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn certify_from_entropy_and_from_reports() {
    let tmp = TempDir::new().unwrap();
    let o = veilkit(&["certify", "--h-star", "0.5"], tmp.path());
    assert_eq!(code(&o), 0);
    let c: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let want = 0.5 / (2.0 * 12f64.log2());
    assert!((c["bound"].as_f64().unwrap() - want).abs() < 1e-15);
    assert_eq!(code(&veilkit(&["certify", "--h-star", "1.5"], tmp.path())), 2);
    assert_eq!(code(&veilkit(&["certify"], tmp.path())), 2);

    let cfg = write_json(tmp.path(), "cfg.json", &experiment(leaky(), json!({"method": "no-def"}), 2));
    assert_eq!(code(&veilkit(&["train", "--config", &cfg, "--out", "t"], tmp.path())), 0);
    let o = veilkit(&["certify", "--report", "t/report.json", "--out", "cert"], tmp.path());
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 2 * 2);
    let certs: Vec<Value> = serde_json::from_slice(&fs::read(tmp.path().join("cert/certificate.json")).unwrap()).unwrap();
    let r = report(&tmp.path().join("t"));
    assert_eq!(certs[0], r["repetitions"][0]["attributes"][0]["certificate"]);
}

#[test]
fn synth_oracle_reports_exact_quantities() {
    let tmp = TempDir::new().unwrap();
    let joint = JointSpec::from_fn(2, 1, |x, y, a| {
        // A independent of X, Y = X
        if usize::from(y) == x { 0.5 * if a[0] == 1 { 0.3 } else { 0.7 } } else { 0.0 }
    })
    .unwrap();
    let path = write_json(tmp.path(), "joint.json", &serde_json::to_value(&joint).unwrap());
    let o = veilkit(&["synth-oracle", "--config", &path], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let a = &v["attributes"][0];
    let h = -(0.3f64 * 0.3f64.log2() + 0.7 * 0.7f64.log2());
    assert!((a["h_a_bits"].as_f64().unwrap() - h).abs() < 1e-12);
    assert!((a["h_a_given_x_bits"].as_f64().unwrap() - h).abs() < 1e-12);
    assert!((a["privacy"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((a["bayes_error"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!(a["djs_y"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(a["enumerated"]["classifiers"], 4);
    assert_eq!(a["enumerated"]["thm2_holds"], true);

    let bad = write_json(tmp.path(), "bad.json", &json!({"x_card": 1, "num_attrs": 1, "probs": [0.5, 0.5, 0.0, 0.1]}));
    assert_eq!(code(&veilkit(&["synth-oracle", "--config", &bad], tmp.path())), 2);
}

#[test]
fn reproduce_keeps_partial_bundle_on_failure() {
    let tmp = TempDir::new().unwrap();
    let cfgs = json!([
        experiment(leaky(), json!({"method": "no-def"}), 2),
        experiment(leaky(), json!({"method": "pca", "params": {"dim": 7}}), 2),
        experiment(leaky(), json!({"method": "pca", "params": {"dim": 2}}), 2),
    ]);
    let path = write_json(tmp.path(), "bundle.json", &cfgs);
    let o = veilkit(&["reproduce", "--config", &path, "--out", "b"], tmp.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("b");
    assert!(out.join("no-def.json").exists() && out.join("pca-2.json").exists() && !out.join("pca.json").exists());
    let failures: Value = serde_json::from_slice(&fs::read(out.join("failures.json")).unwrap()).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 1);
    assert!(failures[0]["error"].as_str().unwrap().contains("seed 0"), "{failures}");
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2 * 2);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,tradeoff,attribute,metric,mean,std,bound"));

    assert_eq!(code(&veilkit(&["reproduce", "--suite", "adult-race"], tmp.path())), 2);
    assert_eq!(code(&veilkit(&["reproduce"], tmp.path())), 2);
}
