use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "synth": { "n_entities": 8, "n_train": 16, "n_dev": 4, "n_test": 4, "max_extra_sentences": 0 },
  "model": { "d_model": 8, "d_k": 8, "d_ff": 16, "n_heads": 2, "n_layers_enc": 1, "n_layers_dec": 1,
             "max_input_len": 96, "max_output_len": 6 },
  "train": { "epochs": 1, "batch_size": 8 }
}"#;

fn afg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = afg(args);
    assert!(
        out.status.success(),
        "afg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Ws {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Ws {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.json");
        fs::write(&config, TINY).unwrap();
        Ws {
            config: config.display().to_string(),
            _dir: dir,
            root,
        }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }
}

fn prepare(ws: &Ws) -> String {
    let data = ws.path("data");
    ok(&["synth", "--config", &ws.config, "--seed", "3", "--out", &data]);
    ok(&["retrieve", "--config", &ws.config, "--in", &data, "--out", &data]);
    ok(&["pseudo", "--config", &ws.config, "--in", &data, "--out", &data]);
    ok(&["label", "--config", &ws.config, "--in", &data, "--out", &data]);
    data
}

fn read(dir: &str, file: &str) -> Vec<u8> {
    fs::read(Path::new(dir).join(file)).unwrap()
}

#[test]
fn synth_is_deterministic_and_stamped() {
    let ws = Ws::new();
    let (a, b) = (ws.path("a"), ws.path("b"));
    ok(&["synth", "--config", &ws.config, "--seed", "7", "--out", &a]);
    ok(&["synth", "--config", &ws.config, "--seed", "7", "--out", &b]);
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "world.json"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    let stamp: serde_json::Value = serde_json::from_slice(&read(&a, "run.json")).unwrap();
    assert_eq!(stamp["seed"], 7);
    assert_eq!(stamp["command"], "synth");
    assert_eq!(stamp["config"]["synth"]["n_train"], 16);
    assert!(stamp["version"].is_string());
}

#[test]
fn training_before_labeling_names_the_missing_stage() {
    let ws = Ws::new();
    let data = ws.path("data");
    ok(&["synth", "--config", &ws.config, "--out", &data]);
    ok(&["pseudo", "--config", &ws.config, "--in", &data, "--out", &data]);
    let out = afg(&["train", "--config", &ws.config, "--in", &data, "--out", &ws.path("run")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("afg label --config"), "{err}");

    // FULL mode needs no labels
    ok(&["train", "--config", &ws.config, "--in", &data, "--out", &ws.path("run"), "--mode", "full"]);
}

#[test]
fn validation_failures_exit_one() {
    let ws = Ws::new();
    let bad = ws.path("bad.json");
    fs::write(&bad, r#"{ "train": { "sigma": 0.2, "sigmaa": 1 } }"#).unwrap();
    assert_eq!(afg(&["synth", "--config", &bad, "--out", &ws.path("x")]).status.code(), Some(1));

    let out = afg(&["retrieve", "--in", &ws.path("nothing"), "--out", &ws.path("x")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("afg synth"));

    assert_eq!(afg(&["train", "--sigma", "1.5", "--in", "x", "--out", "y"]).status.code(), Some(1));
    assert_eq!(afg(&["gradcheck", "--sigma", "2"]).status.code(), Some(1));
    assert_eq!(afg(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(afg(&["--help"]).status.code(), Some(0));
}

#[test]
fn pipeline_train_eval_report() {
    let ws = Ws::new();
    let data = prepare(&ws);
    let run = ws.path("run");
    let stdout = ok(&["train", "--config", &ws.config, "--in", &data, "--out", &run, "--sigma", "0.3", "--seed", "1"]);
    assert!(stdout.contains("checkpoint"));
    let cell = Path::new(&run).join("0.3/1");
    for f in ["model.ckpt", "metrics.jsonl", "run.json"] {
        assert!(cell.join(f).exists(), "{f}");
    }
    let eval_dir = ws.path("eval");
    let ckpt = cell.join("model.ckpt").display().to_string();
    let table = ok(&["eval", "--config", &ws.config, "--checkpoint", &ckpt, "--in", &data, "--split", "dev", "--out", &eval_dir]);
    assert!(table.contains("em"));
    assert!(Path::new(&eval_dir).join("records.jsonl").exists());
    let report = ok(&["report", "--in", &eval_dir]);
    assert!(report.contains("e2e"), "{report}");

    let out = afg(&["eval", "--config", &ws.config, "--checkpoint", &ckpt, "--in", &data, "--split", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_checkpoint_per_cell() {
    let ws = Ws::new();
    let data = prepare(&ws);
    let run = ws.path("sweep");
    let table = ok(&["sweep-sigma", "--config", &ws.config, "--in", &data, "--out", &run, "--sigma", "0,0.5", "--seed", "0,1"]);
    assert!(table.contains("sigma"));
    for sigma in ["0", "0.5"] {
        for seed in ["0", "1"] {
            let cell = Path::new(&run).join(sigma).join(seed);
            assert!(cell.join("model.ckpt").exists(), "{}", cell.display());
        }
    }
    let sweep: serde_json::Value = serde_json::from_slice(&read(&run, "sweep.json")).unwrap();
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 2);
    assert!(ok(&["report", "--in", &run]).contains("mean"));

    let out = afg(&["sweep-sigma", "--config", &ws.config, "--in", &data, "--out", &run, "--seed", "0"]);
    assert_eq!(out.status.code(), Some(1));
}
