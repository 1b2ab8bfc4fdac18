use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_zdcgan"));
    cmd.args(args).env_remove("ZDCGAN_DATA_ROOT");
    if let Some(root) = env {
        cmd.env("ZDCGAN_DATA_ROOT", root);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args, None);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const TINY: [&str; 6] = ["--epochs", "1", "--batch-size", "4", "--base-channels", "2"];

fn dataset_with(dir: &Path, groups: &str) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--seed", "2", "--groups", groups, "--per-group", "3", "--out", s(&data)]);
    data
}

fn dataset(dir: &Path) -> PathBuf {
    dataset_with(dir, "4")
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    for f in ["manifest.json", "conditions.bin", "responses.bin", "groups.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    assert_eq!(fs::metadata(data.join("responses.bin")).unwrap().len(), 12 * 1680 * 4);

    ok(&["stats", "--data", s(&data)]);
    let stats = json(data.join("stats.json"));
    assert_eq!(stats["per_group"].as_array().unwrap().len(), 4);
    assert_eq!(stats["normalization_constant"].as_f64(), Some(12.0));

    let run_dir = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run_dir)];
    args.extend(TINY);
    ok(&args);
    assert!(run_dir.join("params.bin").exists());
    let meta = json(run_dir.join("meta.json"));
    assert_eq!(meta["weights"]["lambda_div"].as_f64(), Some(0.1));
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    // 12 samples in batches of 4
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["generator"]["total"].as_f64().unwrap().is_finite());
    }

    let rep = tmp.path().join("report");
    let stdout = ok(&[
        "eval", "--checkpoint", s(&run_dir), "--data", s(&data), "--out", s(&rep),
        "--samples-per-condition", "2",
    ]);
    for label in ["ch1", "ch5", "mean"] {
        assert!(stdout.contains(label), "{stdout}");
    }
    let report = json(rep.join("report.json"));
    assert_eq!(report["n_samples"].as_u64(), Some(8));
    for c in 1..=5 {
        assert!(rep.join(format!("hist_ch{c}.csv")).exists());
    }

    let plots = tmp.path().join("plots");
    ok(&[
        "plot", "--report", s(&rep), "--out", s(&plots), "--checkpoint", s(&run_dir), "--data",
        s(&data), "--samples", "3",
    ]);
    assert!(plots.join("hist_ch4.csv").exists());
    assert!(plots.join("hist_ch5.csv").exists());
    assert!(!plots.join("hist_ch1.csv").exists());
    assert_eq!(json(plots.join("samples.json")).as_array().unwrap().len(), 3);
}

#[test]
fn data_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out = run(&["stats"], Some(&data));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("stats.json").exists());
    let out = run(&["stats"], None);
    assert_eq!(code(&out), 2);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[train]\ndata = {:?}\n\n[train.config]\nepochs = 2\nbatch_size = 4\n\n[train.config.architecture]\nbase_channels = 2\n",
            s(&data)
        ),
    )
    .unwrap();
    let a = tmp.path().join("a");
    ok(&["--config", s(&cfg), "train", "--out", s(&a)]);
    assert_eq!(fs::read_to_string(a.join("train_log.jsonl")).unwrap().lines().count(), 6);
    let b = tmp.path().join("b");
    ok(&["--config", s(&cfg), "train", "--out", s(&b), "--epochs", "1"]);
    assert_eq!(fs::read_to_string(b.join("train_log.jsonl")).unwrap().lines().count(), 3);
    assert_eq!(json(b.join("meta.json"))["architecture"]["base_channels"].as_u64(), Some(2));

    fs::write(&cfg, "[train]\nepoch = 2\n").unwrap();
    assert_eq!(code(&run(&["--config", s(&cfg), "train", "--out", s(&b)], None)), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    let bad = run(&["synth", "--per-group", "1", "--out", s(&p("d"))], None);
    assert_eq!(code(&bad), 2);
    assert!(!String::from_utf8_lossy(&bad.stderr).is_empty());
    assert_eq!(code(&run(&["synth"], None)), 2);
    assert_eq!(code(&run(&["train", "--data", s(&p("missing")), "--out", s(&p("r"))], None)), 2);

    let data = dataset(tmp.path());
    assert_eq!(
        code(&run(&["eval", "--checkpoint", s(&p("missing")), "--data", s(&data)], None)),
        2
    );
    let r = p("r");
    let args = ["train", "--data", s(&data), "--out", s(&r), "--batch-size", "1"];
    assert_eq!(code(&run(&args, None)), 2);
    assert_eq!(code(&run(&["bogus"], None)), 2);
}

#[test]
fn divergence_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out_dir = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&out_dir)];
    args.extend(TINY);
    args.extend(["--optimizer", "sgd", "--lr-g", "1e30", "--lr-d", "1e30", "--lr-r", "1e30"]);
    let out = run(&args, None);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let record = json(out_dir.join("divergence.json"));
    assert!(record.is_object());
}

#[test]
fn gridsearch_dry_run_plans_the_reference_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("grid");
    ok(&["gridsearch", "--data", s(&data), "--out", s(&out), "--dry-run", "--seed", "10"]);
    let plan = json(out.join("grid_plan.json"));
    let cells = plan["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 45);
    assert_eq!(cells[2]["seeds"], serde_json::json!([2010, 2011, 2012, 2013, 2014]));
}

#[test]
fn gridsearch_ranks_a_small_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset_with(tmp.path(), "6");
    let out = tmp.path().join("grid");
    let mut args = vec![
        "gridsearch", "--data", s(&data), "--out", s(&out), "--runs-per-cell", "1",
        "--grid-div", "0.1", "--grid-in", "1e-10", "--grid-aux", "1e-4,1e-3",
        "--samples-per-condition", "2", "--jobs", "1",
    ];
    args.extend(TINY);
    let stdout = ok(&args);
    assert!(stdout.contains("rank"));
    let results = json(out.join("grid_results.json"));
    let cells = results["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    let ranks: Vec<u64> = cells.iter().map(|c| c["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, [1, 2]);
    assert!(cells[0]["mean_ws"].as_f64().unwrap() <= cells[1]["mean_ws"].as_f64().unwrap());
}

#[test]
fn gridsearch_rejects_an_empty_test_split() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path());
    let out = tmp.path().join("grid");
    let mut args = vec!["gridsearch", "--data", s(&data), "--out", s(&out), "--runs-per-cell", "1"];
    args.extend(TINY);
    // ceil(0.8 · 4) = 4 training groups
    assert_eq!(code(&run(&args, None)), 2);
}
