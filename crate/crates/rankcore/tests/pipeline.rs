use std::fs;
use std::path::Path;
use std::time::Instant;

use rankcore::log::Logger;
use rankcore::pipeline::{run_pipeline, Method, PipelineConfig};
use rankcore_core::benchmark::Task;
use rankcore_core::dataset::SynthConfig;
use rankcore_core::training::TrainConfig;

fn minimal(root: &Path) -> PipelineConfig {
    PipelineConfig {
        out_dir: root.join("out"),
        cache_dir: Some(root.join("cache")),
        synth: SynthConfig { n_subjects: 20, ..SynthConfig::default() },
        operators: ["pearson", "cov_empirical", "spearman", "pdist_euclidean", "mi_gaussian"].map(String::from).to_vec(),
        seeds: vec![0],
        ..PipelineConfig::default()
    }
}

fn quick(root: &Path) -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig { epochs: 4, ..TrainConfig::default() },
        synth: SynthConfig { n_subjects: 12, ..SynthConfig::default() },
        ..minimal(root)
    }
}

#[test]
fn minimal_config_runs_and_reruns_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal(dir.path());
    let log = Logger::new(true);
    let t0 = Instant::now();
    let first = run_pipeline(&cfg, 0, false, &log).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "minimal pipeline took {elapsed:.0}s");
    let bytes = fs::read(&first.report_path).unwrap();
    assert!(first.stages.iter().any(|s| !s.cache_hit));

    let report = &first.report;
    assert_eq!(report.tasks.len(), 2);
    for t in &report.tasks {
        assert_eq!(t.cells.len(), Method::ALL.len() * 3 * 3);
        for c in &t.cells {
            assert_eq!(c.values.len(), 1);
            assert!((0.0..=1.0 + 1e-12).contains(&c.mean));
        }
    }
    assert_eq!(report.seeds.len(), 1);
    assert_eq!(report.dataset.subjects, 20);

    let second = run_pipeline(&cfg, 1, false, &log).unwrap();
    assert!(second.stages.iter().all(|s| s.cache_hit), "{:?}", second.stages.iter().filter(|s| !s.cache_hit).collect::<Vec<_>>());
    assert_eq!(second.stages.len(), first.stages.len());
    assert_eq!(fs::read(&second.report_path).unwrap(), bytes);
}

#[test]
fn fresh_caches_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let log = Logger::new(true);
    let ra = run_pipeline(&quick(a.path()), 1, false, &log).unwrap();
    let rb = run_pipeline(&PipelineConfig { out_dir: b.path().join("out"), cache_dir: Some(b.path().join("cache")), ..quick(a.path()) }, 3, false, &log)
        .unwrap();
    assert_eq!(fs::read(ra.report_path).unwrap(), fs::read(rb.report_path).unwrap());
}

#[test]
fn full_ratio_scores_one_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { ratios: vec![1.0], ks: vec![1, 3, 5], ..quick(dir.path()) };
    let out = run_pipeline(&cfg, 0, false, &Logger::new(true)).unwrap();
    for t in &out.report.tasks {
        for c in &t.cells {
            assert_eq!(c.mean, 1.0, "{} {} k={}", t.task.name(), c.method, c.k);
        }
    }
}

#[test]
fn editing_report_settings_reuses_upstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let log = Logger::new(true);
    let cfg = quick(dir.path());
    run_pipeline(&cfg, 0, false, &log).unwrap();
    let edited = PipelineConfig { ks: vec![3], tasks: vec![Task::Diagnosis], ..cfg };
    let out = run_pipeline(&edited, 0, false, &log).unwrap();
    assert!(out.stages.iter().all(|s| s.cache_hit));
    assert_eq!(out.report.tasks.len(), 1);
    assert!(out.report.tasks[0].cells.iter().all(|c| c.k == 3));

    // A new selection ratio recomputes only selection and ranking.
    let more = PipelineConfig { ratios: vec![0.2], ..edited };
    let out = run_pipeline(&more, 0, false, &log).unwrap();
    for s in out.stages.iter().filter(|s| !matches!(s.stage.as_str(), "select" | "rank")) {
        assert!(s.cache_hit, "{} should be cached", s.stage);
    }
    assert!(out.stages.iter().any(|s| s.stage == "select" && !s.cache_hit));
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let log = Logger::new(true);
    for bad in [
        PipelineConfig { seeds: vec![], ..quick(dir.path()) },
        PipelineConfig { ratios: vec![0.0], ..quick(dir.path()) },
        PipelineConfig { ratios: vec![1.5], ..quick(dir.path()) },
        PipelineConfig { operators: vec!["nope".into()], ..quick(dir.path()) },
        PipelineConfig { operators: vec!["spearman".into()], ..quick(dir.path()) },
    ] {
        assert!(run_pipeline(&bad, 0, false, &log).is_err());
    }
    let unknown: Result<PipelineConfig, _> = serde_json::from_str(r#"{"ratioz":[0.1]}"#);
    assert!(unknown.is_err());
}
