use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rankcore_core::benchmark::{ConsistencyReport, Ranking};
use rankcore_core::selection::CoreSet;
use serde_json::Value;

fn rankcore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankcore")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rankcore(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn stage_by_stage_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen_cfg = d.join("gen.json");
    fs::write(&gen_cfg, r#"{"n_subjects": 10}"#).unwrap();
    let data = d.join("data");
    ok(&["--quiet", "--seed", "3", "gen", "--config", p(&gen_cfg), "--out", p(&data)]);
    assert!(data.join("manifest.json").exists());

    let fc = d.join("fc");
    let out = ok(&["spi", "--data", p(&data), "--out", p(&fc), "--ops", "pearson,cov_shrunk,spearman", "--set", "cov_shrunk.shrinkage=0.2"]);
    assert!(out.contains("computed 150"), "{out}");
    let again = ok(&["spi", "--data", p(&data), "--out", p(&fc), "--ops", "pearson,cov_shrunk,spearman", "--set", "cov_shrunk.shrinkage=0.2"]);
    assert!(again.contains("computed 0, skipped 150"), "{again}");

    let train = d.join("train");
    ok(&["--quiet", "--seed", "1", "train", "--data", p(&data), "--epochs", "3", "--out", p(&train)]);
    for f in ["params.bin", "sps.csv", "trace.csv"] {
        assert!(train.join(f).exists(), "{f}");
    }
    let sps = train.join("sps.csv");

    let mut ranking_paths = Vec::new();
    for method in ["sclcs", "sclcs-dense", "random", "kmeans"] {
        let cs_path = d.join(format!("{method}.json"));
        ok(&["--quiet", "--seed", "5", "select", "--method", method, "--sps", p(&sps), "--ratio", "0.3", "--fc", p(&fc), "--out", p(&cs_path)]);
        let cs: CoreSet = read(&cs_path);
        assert_eq!(cs.sample_ids.len(), 15);
        assert_eq!(cs.method, method);
        let r_path = d.join(format!("rank-{method}.json"));
        ok(&["--quiet", "rank", "--fc", p(&fc), "--subset", p(&cs_path), "--task", "diagnosis", "--allow-degenerate", "--out", p(&r_path)]);
        ranking_paths.push(r_path);
    }
    let full = d.join("full.json");
    ok(&["--quiet", "rank", "--fc", p(&fc), "--full", "--task", "diagnosis", "--out", p(&full)]);
    let r: Ranking = read(&full);
    assert_eq!(r.len(), 3);
    assert_eq!(r.sample_count, 50);

    let runs = ranking_paths.iter().map(|x| p(x)).collect::<Vec<_>>().join(",");
    let rep_path = d.join("report.json");
    let out = ok(&["report", "--truth", p(&full), "--runs", &runs, "--ks", "1,3", "--out", p(&rep_path)]);
    assert!(out.contains("nDCG@1"), "{out}");
    let rep: ConsistencyReport = read(&rep_path);
    assert_eq!(rep.cells.len(), 4 * 2);

    let fit_out = d.join("fit").join("pearson.json");
    let fit_cfg = d.join("fit.json");
    fs::write(&fit_cfg, r#"{"max_epochs": 3, "shape": {"heads": 2, "head_dim": 4, "value_dim": 4, "out_dim": 4}}"#).unwrap();
    ok(&["--quiet", "fit", "--data", p(&data), "--target", "pearson", "--config", p(&fit_cfg), "--out", p(&fit_out)]);
    let fit: Value = read(&fit_out);
    assert!(fit["train_mse_end"].as_f64().unwrap() <= fit["train_mse_start"].as_f64().unwrap());
}

#[test]
fn validate_writes_machine_readable_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    ok(&["--quiet", "--seed", "2", "validate", "--which", "discrepancy", "--out", p(&out)]);
    let v: Value = read(&out);
    assert_eq!(v["passed"], Value::Bool(true));
    assert!(v["results"]["discrepancy"].is_object());
}

#[test]
fn failures_exit_non_zero_with_json_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = rankcore(&["spi", "--data", p(&missing), "--out", p(&dir.path().join("fc"))]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(last["event"], "error");

    let out = rankcore(&["select", "--method", "bogus", "--sps", "x", "--ratio", "0.1", "--out", "y"]);
    assert!(!out.status.success());
    let out = rankcore(&["rank", "--fc", "x", "--task", "diagnosis", "--out", "y"]);
    assert!(!out.status.success(), "rank needs --full or --subset");
}

#[test]
fn pipeline_honours_cache_env_and_stays_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out_dir = dir.path().join("out");
    let cache = dir.path().join("env-cache");
    let json = serde_json::json!({
        "out_dir": out_dir,
        "synth": {"n_subjects": 8},
        "operators": ["pearson", "cov_empirical"],
        "seeds": [0],
        "train": {"epochs": 3},
        "ks": [2],
    });
    fs::write(&cfg, serde_json::to_vec(&json).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rankcore"))
        .args(["--quiet", "pipeline", "--config", p(&cfg)])
        .env("RANKCORE_CACHE", &cache)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty() && out.stderr.is_empty());
    assert!(out_dir.join("report.json").exists());
    assert!(cache.join("dataset").is_dir());
    assert!(!out_dir.join("cache").exists());
}
