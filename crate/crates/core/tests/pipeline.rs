mod common;

use cqr_core::pipeline::{self, workdir as wd, Run, Stage};
use cqr_core::Error;

#[test]
fn index_manifest_and_overwrite_contract() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(common::tiny_config(dir.path()), false).unwrap();
    pipeline::cmd_ingest(&run).unwrap();
    let m = pipeline::cmd_index(&run).unwrap();
    assert_eq!(m.doc_count, 200);
    assert_eq!(m.checksums.len(), 3);
    let err = pipeline::cmd_index(&run).unwrap_err();
    assert!(matches!(err, Error::AlreadyExists(_)));
    assert!(err.is_user_error());
    drop(run);

    let forced = Run::open(common::tiny_config(dir.path()), true).unwrap();
    let again = pipeline::cmd_index(&forced).unwrap();
    assert_eq!(again.checksums, m.checksums);
}

#[test]
fn missing_dependencies_name_their_producer() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(common::tiny_config(dir.path()), false).unwrap();
    let producer = |e: Error| match e {
        Error::MissingDependency { producer, .. } => producer,
        other => panic!("unexpected {other}"),
    };
    assert_eq!(producer(pipeline::cmd_index(&run).unwrap_err()), "ingest");
    pipeline::cmd_pipeline(&run, &[Stage::Ingest, Stage::Index], None).unwrap();
    assert_eq!(producer(pipeline::cmd_stage1(&run).unwrap_err()), "annotate");
    pipeline::cmd_pipeline(&run, &[Stage::Annotate, Stage::Stage1], None).unwrap();
    let e = pipeline::cmd_pipeline(&run, &[Stage::Stage2], None).unwrap_err();
    assert_eq!(e.to_string(), "missing dependency `ranked.jsonl`; run `rank` first");
    assert_eq!(producer(pipeline::cmd_rank(&run).unwrap_err()), "gen-candidates");
    assert_eq!(producer(pipeline::cmd_trace_alignment(&run).unwrap_err()), "stage2");
}

#[test]
fn annotation_uses_fixtures_and_ranked_demonstrations() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(common::tiny_config(dir.path()), false).unwrap();
    pipeline::cmd_pipeline(&run, &[Stage::Ingest, Stage::Index], None).unwrap();
    let zero = pipeline::cmd_annotate(&run, None).unwrap();
    assert_eq!(zero.demonstrations, 0);
    assert_eq!(zero.failures, 0);
    assert_eq!(zero.labels, zero.prompts);
    let fixtures = cqr_core::annotation::load_labels(&common::toy_dir().join("labels.jsonl")).unwrap();
    let got = cqr_core::annotation::load_labels(&run.workdir.path(wd::LABELS)).unwrap();
    assert!(got.iter().all(|l| fixtures.contains(l)));

    pipeline::cmd_pipeline(&run, &[Stage::Stage1, Stage::GenCandidates, Stage::Rank], None).unwrap();
    let few = pipeline::cmd_annotate(&run, None).unwrap();
    assert_eq!(few.demonstrations, 3);
    let prompts = cqr_core::annotation::load_prompts(&run.workdir.path(wd::PROMPTS)).unwrap();
    for p in &prompts {
        assert_eq!(p.prompt.matches("Bad Rewrite: ").count(), 3);
        assert!(p.prompt.ends_with("Good Rewrite:"));
    }
}

fn full_run(dir: &std::path::Path) -> (Vec<u8>, Vec<pipeline::ManifestEntry>) {
    let run = Run::open(common::tiny_config(dir), false).unwrap();
    pipeline::cmd_pipeline(&run, &Stage::ALL, None).unwrap();
    for f in [wd::CHECKPOINT_S1, wd::CANDIDATES, wd::RANKED, wd::CHECKPOINT_S2, wd::REPORT_JSON, wd::ALIGNMENT] {
        assert!(run.workdir.path(f).exists(), "{f}");
    }
    (std::fs::read(run.workdir.path(wd::REPORT_JSON)).unwrap(), run.workdir.manifest().unwrap())
}

#[test]
fn reruns_reproduce_artifact_hashes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (report_a, man_a) = full_run(a.path());
    let (report_b, man_b) = full_run(b.path());
    assert_eq!(report_a, report_b);
    assert!(!String::from_utf8(report_a).unwrap().contains("timestamp"));
    let hashes = |m: &[pipeline::ManifestEntry]| m.iter().map(|e| (e.artifact.clone(), e.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(hashes(&man_a), hashes(&man_b));
}
