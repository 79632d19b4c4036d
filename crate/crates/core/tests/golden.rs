//! Golden manifest for the bundled mini-corpus at seed 42.
//! Regenerate with `HOUSETOUR_BLESS=1 cargo test -p housetour-core --test golden`.

use std::path::Path;

use housetour_core::pipeline::{Pipeline, PipelineConfig};

#[test]
fn mini_corpus_matches_golden_manifest() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::load(&root.join("data/mini/config.toml")).unwrap();
    config.paths.out_dir = out.path().to_path_buf();
    config.seed = 42;
    Pipeline::new(config).unwrap().run_all().unwrap();
    let got = std::fs::read_to_string(out.path().join("manifest.json")).unwrap();

    let golden = root.join("tests/golden/manifest_seed42.json");
    if std::env::var_os("HOUSETOUR_BLESS").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&golden).expect("golden manifest missing; run with HOUSETOUR_BLESS=1");
    assert_eq!(got, want, "manifest drifted from the golden digests");
}
