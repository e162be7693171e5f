//! The files under data/toy are the generator's output. Set
//! `CQR_REGENERATE_TOY=1` to rewrite them after changing the generator.

use std::path::PathBuf;

use cqr_core::pipeline::PipelineConfig;
use cqr_core::toy::ToyDataset;

fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

const FILES: [&str; 4] = ["passages.jsonl", "conversations_train.jsonl", "conversations_test.jsonl", "labels.jsonl"];

#[test]
fn shipped_files_match_generator() {
    let data = ToyDataset::generate();
    if std::env::var("CQR_REGENERATE_TOY").is_ok() {
        data.write_to(&toy_dir()).unwrap();
    }
    let fresh = tempfile::tempdir().unwrap();
    data.write_to(fresh.path()).unwrap();
    for f in FILES {
        let shipped = std::fs::read(toy_dir().join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let expected = std::fs::read(fresh.path().join(f)).unwrap();
        assert!(shipped == expected, "{f} differs from the generator; regenerate with CQR_REGENERATE_TOY=1");
    }
}

#[test]
fn shipped_config_loads() {
    let cfg = PipelineConfig::load(&toy_dir().join("config.json")).unwrap();
    assert!(cfg.paths.passages.exists());
    assert!(cfg.annotation.mock_fixtures.unwrap().exists());
}
