use std::fs;
use std::path::Path;

use ldtcast::ldt::SyntheticScenario;
use ldtcast::pipeline::{emit_report, run_pipeline, Manifest, ReportOptions, RunConfig, Stages, StageStatus};
use ldtcast::Error;

fn small(dir: &Path) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        synthetic: SyntheticScenario {
            max_lag: 10,
            ..SyntheticScenario::with_groups(2, 3, 0)
        },
        hidden_size: 16,
        epochs: 15,
        k: 2,
        augment_epochs: 5,
        min_extra_days: 5,
        restarts: 3,
        ..Default::default()
    }
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn synth_only_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        stages: Stages::only("synth").unwrap(),
        ..small(tmp.path())
    };
    let m = run_pipeline(&cfg).unwrap();
    assert!(m.completed);
    assert_eq!(m.stages.len(), 1);
    assert!(tmp.path().join("entities/99001.json").is_file());
    assert!(tmp.path().join("entities/ground_truth.json").is_file());
    assert!(tmp.path().join("manifest.json").is_file());
    assert!(m.seeds.contains_key("synth"));
}

#[test]
fn full_synthetic_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { svg: true, ..small(tmp.path()) };
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.models.len(), 6);
    assert!(m.stages.iter().all(|s| s.status == StageStatus::Ok));
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        ["synth", "train", "embed", "cluster", "stability", "evaluate", "forecast", "report"]
    );
    let d = tmp.path();
    for rel in [
        "models/99001/model.json",
        "models/99006/history.csv",
        "embeddings/pit60_last.json",
        "clusters/kmeans_pit60_combined.json",
        "clusters/actual_kmedoids_pit30_hidden.json",
        "curves/99003.csv",
        "forecasts/99006.csv",
        "report/clustering_summary.csv",
        "report/stability_over_time.svg",
        "report/forecast_vs_actual.svg",
    ] {
        assert!(d.join(rel).is_file(), "missing {rel}");
    }
    assert!(read(d, "forecasts/99001.csv").starts_with("date_offset,pred_infections,pred_deaths,donor_count\n"));
    assert!(read(d, "curves/99001.csv").starts_with("horizon,rel_err_infections,rel_err_deaths\n"));
    // 2 methods x 2 variants x 3 PITs against the reference PIT
    let stability = read(d, "report/stability_over_time.csv");
    assert_eq!(stability.lines().count(), 1 + 12);
    let summary = read(d, "report/clustering_summary.csv");
    assert_eq!(summary.lines().count(), 1 + 12);
    assert!(summary.lines().next().unwrap().starts_with("method,pit,k,with_static,accuracy_vs_actual,ari_vs_actual"));

    let manifest: Manifest = serde_json::from_str(&read(d, "manifest.json")).unwrap();
    assert!(manifest.completed);
    assert_eq!(manifest.config, cfg);
}

#[test]
fn later_stages_reload_and_hash_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.stages.forecast = false;
    cfg.stages.report = false;
    cfg.stages.evaluate = false;
    run_pipeline(&cfg).unwrap();
    cfg.stages = Stages::only("evaluate").unwrap();
    let m = run_pipeline(&cfg).unwrap();
    // six entity files, their features manifest and ground truth, six models
    assert_eq!(m.inputs.len(), 6 + 2 + 6);
    assert!(m.inputs.iter().all(|i| i.sha256.len() == 64));
    assert!(tmp.path().join("horizon_errors.csv").is_file());
}

#[test]
fn missing_data_dir_fails_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = small(&out);
    cfg.stages.synth = false;
    cfg.stages.ingest = true;
    cfg.data_dir = Some(tmp.path().join("no-such-data"));
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.to_string().contains("no-such-data"), "{err}");
    assert!(!out.exists());
}

#[test]
fn stage_failure_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.k = 50;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "cluster"), "{err}");
    let m: Manifest = serde_json::from_str(&read(tmp.path(), "manifest.json")).unwrap();
    assert!(!m.completed);
    assert_eq!(m.stages.last().unwrap().status, StageStatus::Failed);
    assert!(m.error.unwrap().contains("cluster"));
    // earlier outputs survive
    assert!(tmp.path().join("embeddings/pit30_last.json").is_file());
}

#[test]
fn report_sections_follow_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.stages.forecast = false;
    run_pipeline(&cfg).unwrap();
    let report = tmp.path().join("report");
    assert!(report.join("clustering_summary.csv").is_file());
    assert!(!report.join("forecast_summary.csv").exists());
    // svg disabled
    assert!(fs::read_dir(&report).unwrap().all(|e| e.unwrap().path().extension().unwrap() == "csv"));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(emit_report(empty.path(), &ReportOptions::default()), Err(Error::Usage(_))));
}
