use std::fs;

use stegclean::config::PipelineConfig;
use stegclean::pipeline::{self, Stage};

fn small(dir: &std::path::Path, jobs: usize) -> PipelineConfig {
    PipelineConfig {
        out_dir: dir.to_path_buf(),
        count: 4,
        size: 64,
        jobs,
        ..PipelineConfig::default()
    }
}

fn strip_config(text: &str) -> String {
    pipeline::manifest_without_timings(text)
        .lines()
        .filter(|l| !l.starts_with("config "))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn thread_count_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline::run_pipeline(&small(a.path(), 1)).unwrap();
    pipeline::run_pipeline(&small(b.path(), 3)).unwrap();
    let read = |d: &tempfile::TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "eval.tsv"), read(&b, "eval.tsv"));
    assert_eq!(read(&a, "masks/gt_0003.png"), read(&b, "masks/gt_0003.png"));
    let text = |d: &tempfile::TempDir| String::from_utf8(read(d, "manifest.txt")).unwrap();
    assert_eq!(strip_config(&text(&a)), strip_config(&text(&b)));
}

#[test]
fn manifest_records_files_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let summary = pipeline::run_pipeline(&small(dir.path(), 2)).unwrap();
    assert_eq!(summary.images, 4);
    let text = fs::read_to_string(&summary.manifest).unwrap();
    assert!(text.lines().last() == Some("status OK"));
    let mut checked = 0;
    for line in text.lines().filter(|l| l.starts_with("file ")) {
        let path = line.split("path=").nth(1).unwrap().split(' ').next().unwrap();
        let hash = line.split("sha256=").nth(1).unwrap();
        assert_eq!(pipeline::sha256_file(&dir.path().join(path)).unwrap(), hash, "{path}");
        checked += 1;
    }
    assert!(checked > 4);
    let tsv = fs::read_to_string(dir.path().join("eval.tsv")).unwrap();
    assert_eq!(tsv.lines().next(), Some(pipeline::EVAL_TSV_HEADER));
    // Four images and two aggregate rows for each of the two thresholds.
    assert_eq!(tsv.lines().count(), 1 + 4 * 2 + 2 * 2);
}

#[test]
fn stage_failure_is_attributed_and_marked() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), 1);
    cfg.preset = dir.path().join("missing-preset.txt").display().to_string();
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Synth);
    let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(text.contains("FAILED stage=synth"));
    assert_eq!(text.lines().last(), Some("status FAILED"));
    assert!(text.starts_with("stegclean-manifest v1\nconfig "));
}

#[test]
fn invalid_config_fails_in_setup() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), 1);
    cfg.size = 8;
    assert_eq!(pipeline::run_pipeline(&cfg).unwrap_err().stage, Stage::Setup);
}
