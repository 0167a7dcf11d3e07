//! Split, palette, run, eval and report on a synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use burnbench_core::assets::Assets;
use burnbench_core::backend::BackendSpec;
use burnbench_core::ingest::Splits;
use burnbench_core::model::{ExperimentId, ExperimentSetting, Pipeline, PromptSource};
use burnbench_core::runner::{enumerate_matrix, read_json, RunLock};
use burnbench_core::synthetic::{self, SyntheticSpec};
use burnbench_core::workflow::{self, METRICS_FILE};
use burnbench_core::{Error, PaletteStats, RunConfig};
use tempfile::TempDir;

const VLM_REPLY: &str = r#"{"prompt_body": "charred dark brown burn scar with grey ash patches surrounded by green forest canopy", "neg_prompt": "ground level view, eye level, forest interior, tree trunks, perspective distortion, clouds, smoke, flames, cartoon, blurry"}"#;

fn corpus() -> &'static Path {
    static CORPUS: OnceLock<TempDir> = OnceLock::new();
    CORPUS
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let samples = synthetic::generate(&SyntheticSpec {
                count: 90,
                size: 64,
                seed: 5,
                ..SyntheticSpec::default()
            })
            .unwrap();
            synthetic::write_corpus(dir.path(), &samples).unwrap();
            dir
        })
        .path()
}

/// A prepared workspace: split and palette done, VLM replies in place.
fn workspace() -> (TempDir, RunConfig) {
    let out = tempfile::tempdir().unwrap();
    let config = RunConfig {
        corpus_root: corpus().to_path_buf(),
        out_dir: out.path().to_path_buf(),
        ..RunConfig::default()
    };
    workflow::split(&config).unwrap();
    workflow::palette(&config).unwrap();
    for i in 0..10 {
        fs::write(config.vlm_dir().join(format!("S{i:02}.response.json")), VLM_REPLY).unwrap();
    }
    (out, config)
}

fn file(path: PathBuf) -> Vec<u8> {
    fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn split_is_stratified_disjoint_and_repeatable() {
    let (_out, config) = workspace();
    let splits: Splits = read_json(&config.splits_path()).unwrap();
    assert_eq!(splits.test.len(), 10);
    assert_eq!(splits.palette_ids.len(), 40);
    for bin in &splits.bins {
        assert_eq!(bin.selected.len(), 2, "{}", bin.label);
    }
    let test_ids = splits.test_corpus_ids();
    assert!(splits.palette_ids.iter().all(|p| !test_ids.contains(p)));
    let ratios: Vec<f64> = splits.test.iter().map(|t| t.burn_ratio).collect();
    assert!(ratios.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(splits.test[0].id, "S00");
    assert!(config.vlm_dir().join("S09.request.json").is_file());

    let first = file(config.splits_path());
    workflow::split(&config).unwrap();
    assert_eq!(first, file(config.splits_path()));

    let palette: PaletteStats = read_json(&config.palette_path()).unwrap();
    assert_eq!(palette.source_sample_ids, {
        let mut ids = splits.palette_ids.clone();
        ids.sort();
        ids
    });
}

#[test]
fn split_reports_underpopulated_bins() {
    let out = tempfile::tempdir().unwrap();
    let config = RunConfig {
        corpus_root: corpus().to_path_buf(),
        out_dir: out.path().to_path_buf(),
        per_bin_count: 20,
        ..RunConfig::default()
    };
    let err = workflow::split(&config).unwrap_err().to_string();
    assert!(err.contains("candidates per bin"), "{err}");
    assert!(err.contains("[0.80, 0.95]"), "{err}");
}

#[test]
fn restricted_run_has_thirty_rows_and_stub_invariants() {
    let (_out, mut config) = workspace();
    config.experiments = vec![ExperimentId::E1, ExperimentId::E2];
    let report = workflow::run(&config, Assets::bundled()).unwrap();
    assert!(report.is_complete(), "{:?}", report.failures);
    assert_eq!(report.records.len(), 60);
    for r in &report.records {
        assert!(r.darkness_contrast > 0.0, "{r:?}");
        if r.experiment_id == ExperimentId::E1 {
            assert_eq!(r.burn_iou, 1.0, "{r:?}");
        }
    }
    config.experiments = vec![ExperimentId::E2];
    config.run_id = "e2".into();
    let report = workflow::run(&config, Assets::bundled()).unwrap();
    assert_eq!(report.records.len(), 30);
    let csv = fs::read_to_string(report.run_dir.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn full_matrix_replays_from_meta() {
    let (_out, config) = workspace();
    let report = workflow::run(&config, Assets::bundled()).unwrap();
    assert_eq!(report.jobs, 140);
    assert_eq!(report.records.len(), 140);
    let mut seen: Vec<(ExperimentId, PromptSource)> = report
        .records
        .iter()
        .map(|r| (r.experiment_id, r.prompt_source))
        .collect();
    seen.dedup();
    let expected: Vec<_> = enumerate_matrix()
        .iter()
        .map(|s| (s.experiment_id, s.prompt_source))
        .collect();
    assert_eq!(seen, expected);

    let mut replay = RunConfig::load(&report.run_dir.join("meta.json")).unwrap();
    assert_eq!(replay, config);
    replay.run_id = "replay".into();
    workflow::run(&replay, Assets::bundled()).unwrap();
    for f in [METRICS_FILE, "summary.csv", "summary.json", "boxplots.svg"] {
        assert_eq!(file(config.run_dir().join(f)), file(replay.run_dir().join(f)), "{f}");
    }
    let plan_a = String::from_utf8(file(config.run_dir().join("plan.json"))).unwrap();
    let plan_b = String::from_utf8(file(replay.run_dir().join("plan.json"))).unwrap();
    assert_eq!(
        plan_a.replace("/replay/", "/default/"),
        plan_b.replace("/replay/", "/default/")
    );
}

#[test]
fn vlm_experiment_without_replies_fails_planning() {
    let (_out, mut config) = workspace();
    fs::remove_file(config.vlm_dir().join("S03.response.json")).unwrap();
    config.experiments = vec![ExperimentId::E5];
    match workflow::run(&config, Assets::bundled()) {
        Err(Error::MissingVlmResponses(ids)) => assert_eq!(ids, vec!["S03".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unreachable_backend_fails_every_job() {
    let (_out, mut config) = workspace();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    drop(listener);
    config.backend = BackendSpec::Http(url);
    config.workers = 4;
    let report = workflow::run(&config, Assets::bundled()).unwrap();
    assert!(report.records.is_empty());
    assert_eq!(report.failures.len(), 140);
    assert!(!report.is_complete());
    let failures: serde_json::Value = read_json(&config.run_dir().join("failures.json")).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 140);
    let csv = fs::read_to_string(config.run_dir().join(METRICS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn eval_scores_external_images() {
    let (out, config) = workspace();
    let splits: Splits = read_json(&config.splits_path()).unwrap();
    let real = out.path().join("real");
    let dark = out.path().join("dark");
    fs::create_dir_all(&real).unwrap();
    fs::create_dir_all(&dark).unwrap();
    for t in &splits.test {
        let dir = corpus().join(&t.corpus_id);
        fs::copy(dir.join("after.png"), real.join(format!("{}.png", t.id))).unwrap();
        let before = burnbench_core::Tile::load_png(&dir.join("before.png")).unwrap();
        let mask = burnbench_core::BurnMask::load_png(&dir.join("mask.png")).unwrap();
        before
            .map_pixels(|i, p| if mask.is_burned(i) { p.map(|v| v * 0.3) } else { p })
            .unwrap()
            .save_png(&dark.join(format!("{}.png", t.corpus_id)))
            .unwrap();
    }
    let setting = ExperimentSetting::new(ExperimentId::E2, Pipeline::Inpaint, false, PromptSource::P1).unwrap();
    let report = workflow::eval(&config, &real, setting).unwrap();
    assert_eq!(report.records.len(), 10);
    assert!(report.records.iter().all(|r| r.delta_c_burn == Some(0.0)));

    let report = workflow::eval(&config, &dark, setting).unwrap();
    assert!(report.skipped.is_empty());
    assert!(report.records.iter().all(|r| r.darkness_contrast > 0.0));

    let summaries = workflow::report(&config).unwrap();
    assert_eq!(summaries.len(), 1);
    assert!(config.run_dir().join("heatmap_burn_iou.svg").is_file());
}

#[test]
fn locked_run_directory_is_refused() {
    let (_out, config) = workspace();
    let _held = RunLock::acquire(&config.run_dir()).unwrap();
    let err = workflow::run(&config, Assets::bundled()).unwrap_err();
    assert!(err.to_string().contains("locked"), "{err}");
}
