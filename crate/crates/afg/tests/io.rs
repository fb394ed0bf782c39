use std::fs;

use afg::io::{load_dataset, read_jsonl, save_dataset, IoError};
use afg_core::corpus::{synth_generate, Example, SynthConfig};
use afg_core::labeling::{label_split, LabelConfig};
use afg_core::pseudo::{simulate_split, SimulatorConfig};

fn labeled_split() -> Vec<Example> {
    let config = SynthConfig {
        n_entities: 8,
        n_train: 12,
        n_dev: 2,
        n_test: 2,
        fact_fraction: 0.3,
        ..SynthConfig::default()
    };
    let mut out = synth_generate(&config, 3).unwrap();
    simulate_split(&mut out.train, &SimulatorConfig::default(), &out.world, "train").unwrap();
    label_split(&mut out.train, &LabelConfig::default(), None).unwrap();
    out.train
}

#[test]
fn dataset_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/train.jsonl");
    let split = labeled_split();
    save_dataset(&split, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), split);

    let bytes = fs::read(&path).unwrap();
    save_dataset(&load_dataset(&path).unwrap(), &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn empty_file_is_an_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    assert!(load_dataset(&path).unwrap().is_empty());
}

fn write_lines(lines: &[String]) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.jsonl");
    fs::write(&path, lines.join("\n")).unwrap();
    (dir, path)
}

fn as_json(ex: &Example) -> serde_json::Value {
    serde_json::to_value(ex).unwrap()
}

#[test]
fn missing_field_reports_its_line() {
    let split = labeled_split();
    let mut broken = as_json(&split[1]);
    broken.as_object_mut().unwrap().remove("query");
    let (_dir, path) = write_lines(&[as_json(&split[0]).to_string(), broken.to_string()]);
    match load_dataset(&path).unwrap_err() {
        IoError::Schema { line, message, .. } => {
            assert_eq!(line, 2);
            assert!(message.contains("query"), "{message}");
        }
        other => panic!("expected a schema error, got {other}"),
    }
}

#[test]
fn fact_verdict_outside_label_set_is_rejected() {
    let split = labeled_split();
    let fact = split
        .iter()
        .find(|e| e.task_kind == afg_core::corpus::TaskKind::Fact)
        .expect("fact examples generated");
    let mut v = as_json(fact);
    v["gold_answers"] = serde_json::json!(["MAYBE"]);
    let (_dir, path) = write_lines(&[v.to_string()]);
    let err = load_dataset(&path).unwrap_err();
    assert!(matches!(err, IoError::Invariant { line: 1, .. }), "{err}");
    assert!(err.to_string().contains(&fact.id), "{err}");
}

#[test]
fn duplicate_ranks_are_rejected() {
    let mut ex = labeled_split().remove(0);
    ex.passages.truncate(3);
    for (p, r) in ex.passages.iter_mut().zip([1, 1, 2]) {
        p.rank = r;
    }
    ex.silver = None;
    let (_dir, path) = write_lines(&[as_json(&ex).to_string()]);
    let err = load_dataset(&path).unwrap_err();
    assert!(matches!(err, IoError::Invariant { .. }), "{err}");
    assert!(err.to_string().contains("rank"), "{err}");
}

#[test]
fn missing_file_is_flagged() {
    let err = read_jsonl::<Example>(std::path::Path::new("/nonexistent/afg/x.jsonl")).unwrap_err();
    assert!(err.is_missing());
}
