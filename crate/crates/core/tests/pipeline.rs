use std::path::{Path, PathBuf};

use housetour_core::pipeline::stats::{compute_stats, emit_report, CorpusStats, StatsInput};
use housetour_core::pipeline::{Manifest, Pipeline, PipelineConfig, PipelineError, Stage};
use housetour_core::{FilterReport, RoomTypeRegistry};

fn mini_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/mini")
}

fn config_in(out: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::load(&mini_dir().join("config.toml")).unwrap();
    config.paths.out_dir = out.to_path_buf();
    config
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn every_written_file_is_in_the_manifest() {
    let out = tempfile::tempdir().unwrap();
    let summary = Pipeline::new(config_in(out.path())).unwrap().run_all().unwrap();
    assert!(summary.manifest.complete);
    let mut on_disk: Vec<String> = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let listed: Vec<String> = summary.manifest.files.keys().cloned().collect();
    assert_eq!(on_disk, listed);
    for (name, digest) in &summary.manifest.files {
        let bytes = std::fs::read(out.path().join(name)).unwrap();
        assert_eq!(&housetour_core::pipeline::sha256_hex(&bytes), digest, "{name}");
    }
    assert_eq!(summary.samples.n_pos + summary.samples.n_neg, summary.stats.counts.judgment_samples);
}

#[test]
fn staged_runs_match_run_all() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Pipeline::new(config_in(a.path())).unwrap().run_all().unwrap();
    let p = Pipeline::new(config_in(b.path())).unwrap();
    for stage in Stage::DATASET {
        p.run_stage(stage).unwrap();
    }
    assert_eq!(manifest(a.path()), manifest(b.path()));
}

#[test]
fn missing_templates_names_instruction_stage() {
    let out = tempfile::tempdir().unwrap();
    let mut config = config_in(out.path());
    config.paths.templates = out.path().join("no-such-templates.txt");
    let err = Pipeline::new(config).unwrap().run_all().unwrap_err();
    assert!(matches!(err, PipelineError::Input { stage: Stage::GenInstructions, .. }), "{err:?}");
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("gen-instructions"));
    let m = manifest(out.path());
    assert!(!m.complete);
    assert_eq!(m.failed_stage, Some(Stage::GenInstructions));
    assert!(m.files.contains_key("trajectories.jsonl"));
    assert!(!m.files.contains_key("pairs.jsonl"));
}

#[test]
fn stage_without_upstream_is_an_input_error() {
    let out = tempfile::tempdir().unwrap();
    let err = Pipeline::new(config_in(out.path())).unwrap().run_stage(Stage::MakeSamples).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert_eq!(err.stage(), Some(Stage::MakeSamples));
}

#[test]
fn malformed_annotations_are_input_errors() {
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"video_id\": \"v\"}\n").unwrap();
    let mut config = config_in(out.path());
    config.paths.annotations = bad;
    let err = Pipeline::new(config).unwrap().run_all().unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Ingest));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn stats_files_round_trip_and_re_emit_identically() {
    let out = tempfile::tempdir().unwrap();
    let p = Pipeline::new(config_in(out.path())).unwrap();
    p.run_all().unwrap();
    let json = std::fs::read(out.path().join("stats.json")).unwrap();
    let text = std::fs::read(out.path().join("stats.txt")).unwrap();
    let stats: CorpusStats = serde_json::from_slice(&json).unwrap();
    assert_eq!(emit_report(&stats).as_bytes(), text.as_slice());
    assert_eq!(stats.room_types.values().sum::<usize>(), stats.counts.frames_kept);
    assert_eq!(stats.frames_per_video.values().sum::<usize>(), stats.counts.videos);
    assert_eq!(stats.trajectory_lengths.values().sum::<usize>(), stats.counts.trajectories);
    let total: f64 = stats.action_distribution.values().sum();
    assert!((total - 1.0).abs() < 1e-5);
    p.run_stage(Stage::Stats).unwrap();
    assert_eq!(std::fs::read(out.path().join("stats.json")).unwrap(), json);
    assert_eq!(std::fs::read(out.path().join("stats.txt")).unwrap(), text);
}

#[test]
fn empty_corpus_gives_zero_counts() {
    let registry = RoomTypeRegistry::default();
    let stats = compute_stats(&StatsInput {
        video_ids: &[],
        report: &FilterReport::default(),
        clean: &[],
        trajectories: &[],
        pairs: &[],
        samples: &[],
        registry: &registry,
    });
    assert_eq!(stats.counts, Default::default());
    assert!(emit_report(&stats).contains("videos"));
}

#[test]
fn train_tj_and_probe_write_reports() {
    let out = tempfile::tempdir().unwrap();
    let mut config = config_in(out.path());
    config.probe.train_houses = 20;
    config.probe.test_houses = 10;
    config.probe.hyper.epochs = 50;
    let p = Pipeline::new(config).unwrap();
    p.run_all().unwrap();
    p.run_stage(Stage::TrainTj).unwrap();
    p.run_stage(Stage::ProbeLayout).unwrap();
    let m = manifest(out.path());
    for name in ["tj_model.json", "tj_metrics.json", "tj_metrics.txt", "houses.jsonl", "probe_report.json"] {
        assert!(m.files.contains_key(name), "{name}");
    }
    assert!(m.complete);
    let model: housetour_core::judgment::TjModelFile =
        serde_json::from_slice(&std::fs::read(out.path().join("tj_model.json")).unwrap()).unwrap();
    assert_eq!(model.weights.len(), housetour_core::judgment::FEATURE_DIM);
}
