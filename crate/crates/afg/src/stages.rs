//! Pipeline stages. Each stage reads a stage directory, writes a new one and
//! stamps it with `run.json`; nothing is carried between stages except files.

use std::fs;
use std::path::{Path, PathBuf};

use afg_core::corpus::{retrieve_topk, synth_generate, Example, SynthConfig, SyntheticWorld};
use afg_core::eval::{evaluate, MetricsReport};
use afg_core::labeling::{label_split, LabelMethod};
use afg_core::model::{E2eModel, Mode, ModelConfig, Vocab};
use afg_core::numerics::GradcheckReport;
use afg_core::pseudo::{merge_pseudo, simulate_split, PseudoRecord};
use afg_core::training::{gradcheck_model, train, StepLog, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{Paths, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{load_dataset, load_pseudo_records, read_json, save_dataset, write_json, write_jsonl};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
pub const RUN_STAMP: &str = "run.json";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const CHECKPOINT: &str = "model.ckpt";
pub const REPORT: &str = "report.json";
pub const RECORDS: &str = "records.jsonl";
pub const SWEEP: &str = "sweep.json";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[Example]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    fn each_mut(&mut self) -> [(&'static str, &mut Vec<Example>); 3] {
        [("train", &mut self.train), ("dev", &mut self.dev), ("test", &mut self.test)]
    }

    pub fn all(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

/// Provenance written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStamp {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub config: RunConfig,
}

pub fn write_stamp(dir: &Path, command: &str, seed: Option<u64>, inputs: &[&Path], config: &RunConfig) -> CliResult<()> {
    let stamp = RunStamp {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        config: config.clone(),
    };
    Ok(write_json(&dir.join(RUN_STAMP), &stamp)?)
}

pub fn load_splits(dir: &Path, paths: &Paths) -> CliResult<Splits> {
    let load = |name: &str| -> CliResult<Vec<Example>> {
        let file = dir.join(paths.split(name).expect("known split"));
        load_dataset(&file).map_err(|e| {
            let missing = e.is_missing();
            let err = CliError::from(e);
            if missing {
                err.context(format!("no {name} split in {}; run `afg synth --out {}` first", dir.display(), dir.display()))
            } else {
                err
            }
        })
    };
    Ok(Splits {
        train: load("train")?,
        dev: load("dev")?,
        test: load("test")?,
    })
}

pub fn save_splits(dir: &Path, paths: &Paths, splits: &Splits) -> CliResult<()> {
    for name in SPLITS {
        let file = dir.join(paths.split(name).expect("known split"));
        save_dataset(splits.get(name).expect("known split"), &file)?;
    }
    Ok(())
}

/// Carries the world description forward so later stages can simulate.
fn carry_world(input: &Path, out: &Path, paths: &Paths) -> CliResult<()> {
    let src = input.join(&paths.world);
    let dst = out.join(&paths.world);
    if src.exists() && src != dst {
        fs::create_dir_all(out).map_err(CliError::runtime)?;
        fs::copy(&src, &dst).map_err(CliError::runtime)?;
    }
    Ok(())
}

pub fn synth(config: &RunConfig, seed: u64, out: &Path) -> CliResult<Splits> {
    config.synth.validate()?;
    let gen = synth_generate(&config.synth, seed)?;
    let splits = Splits {
        train: gen.train,
        dev: gen.dev,
        test: gen.test,
    };
    save_splits(out, &config.paths, &splits)?;
    write_json(&out.join(&config.paths.world), &gen.world)?;
    write_stamp(out, "synth", Some(seed), &[], config)?;
    Ok(splits)
}

/// Re-ranks each example's passages by unigram overlap with its query and
/// keeps the top `k`.
pub fn retrieve(config: &RunConfig, input: &Path, out: &Path, k: usize) -> CliResult<Splits> {
    let mut splits = load_splits(input, &config.paths)?;
    for (_, split) in splits.each_mut() {
        for ex in split.iter_mut() {
            if ex.silver.is_some() {
                return Err(CliError::validation(anyhow::anyhow!(
                    "example {} is already labeled; run `retrieve` before `label`",
                    ex.id
                )));
            }
            ex.passages = retrieve_topk(&ex.query, &ex.passages, k)?;
        }
    }
    save_splits(out, &config.paths, &splits)?;
    carry_world(input, out, &config.paths)?;
    write_stamp(out, "retrieve", None, &[input], config)?;
    Ok(splits)
}

/// Fills pseudo-answers, from the simulator or from an imported file.
pub fn pseudo(config: &RunConfig, input: &Path, out: &Path, seed: Option<u64>, import: Option<&Path>) -> CliResult<Splits> {
    let mut splits = load_splits(input, &config.paths)?;
    let mut sim = config.simulator.clone();
    if let Some(s) = seed {
        sim.seed = s;
    }
    match import {
        Some(file) => {
            let records = load_pseudo_records(file)?;
            import_records(&records, &mut splits)?;
        }
        None => {
            let world_file = input.join(&config.paths.world);
            if !world_file.exists() {
                return Err(CliError::validation(anyhow::anyhow!(
                    "{} has no world description, so pseudo-answers cannot be simulated; \
                     supply them with `afg pseudo --import FILE`",
                    input.display()
                )));
            }
            let world: SyntheticWorld = read_json(&world_file)?;
            for (name, split) in splits.each_mut() {
                simulate_split(split, &sim, &world, name)?;
            }
        }
    }
    save_splits(out, &config.paths, &splits)?;
    carry_world(input, out, &config.paths)?;
    let mut inputs = vec![input];
    inputs.extend(import);
    write_stamp(out, "pseudo", Some(sim.seed), &inputs, config)?;
    Ok(splits)
}

/// Routes each imported record to the split holding its id.
pub fn import_records(records: &[PseudoRecord], splits: &mut Splits) -> CliResult<()> {
    let mut per_split: [Vec<PseudoRecord>; 3] = Default::default();
    for r in records {
        let slot = SPLITS
            .iter()
            .position(|s| splits.get(s).expect("known split").iter().any(|e| e.id == r.id));
        match slot {
            Some(i) => per_split[i].push(r.clone()),
            None => {
                return Err(CliError::validation(anyhow::anyhow!("import_pseudo: unknown id `{}`", r.id)));
            }
        }
    }
    for ((_, split), recs) in splits.each_mut().into_iter().zip(per_split) {
        merge_pseudo(&recs, split)?;
    }
    Ok(())
}

fn require_pseudo(splits: &Splits, input: &Path, config_hint: &str) -> CliResult<()> {
    if let Some(ex) = splits.all().find(|e| e.pseudo.is_none()) {
        return Err(CliError::validation(anyhow::anyhow!(
            "example {} has no pseudo-answer; run first: afg pseudo{config_hint} --in {dir} --out {dir}",
            ex.id,
            dir = input.display()
        )));
    }
    Ok(())
}

fn require_labels(splits: &Splits, input: &Path, config_hint: &str) -> CliResult<()> {
    if let Some(ex) = splits.train.iter().find(|e| e.silver.is_none()) {
        return Err(CliError::validation(anyhow::anyhow!(
            "example {} has no silver labels; run first: afg label{config_hint} --in {dir} --out {dir}",
            ex.id,
            dir = input.display()
        )));
    }
    Ok(())
}

/// `--config PATH` as it should appear in a suggested command.
pub fn config_hint(config_path: Option<&Path>) -> String {
    config_path.map(|p| format!(" --config {}", p.display())).unwrap_or_default()
}

/// Attaches silver labels. The likelihood-ratio method scores with the
/// model in `checkpoint`.
pub fn label(config: &RunConfig, input: &Path, out: &Path, checkpoint: Option<&Path>, hint: &str) -> CliResult<Splits> {
    config.label.validate()?;
    let mut splits = load_splits(input, &config.paths)?;
    require_pseudo(&splits, input, hint)?;
    let model = match (config.label.method, checkpoint) {
        (LabelMethod::Cxmi, None) => {
            return Err(CliError::validation(anyhow::anyhow!(
                "label method cxmi scores with a trained model; pass --checkpoint PATH"
            )));
        }
        (LabelMethod::Cxmi, Some(p)) => Some(checkpoint::load(p)?),
        _ => None,
    };
    let lm = model.as_ref().map(|m| m as &dyn afg_core::labeling::SequenceScorer);
    for (_, split) in splits.each_mut() {
        label_split(split, &config.label, lm)?;
    }
    save_splits(out, &config.paths, &splits)?;
    carry_world(input, out, &config.paths)?;
    let mut inputs = vec![input];
    inputs.extend(checkpoint);
    write_stamp(out, "label", None, &inputs, config)?;
    Ok(splits)
}

/// Directory of one (σ, seed) training cell.
pub fn cell_dir(run: &Path, sigma: f64, seed: u64) -> PathBuf {
    run.join(format!("{sigma}")).join(seed.to_string())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub outcome: TrainOutcome,
    pub model: E2eModel,
}

/// The train config after command-line overrides.
pub fn resolve_train(config: &RunConfig, seed: u64, sigma: Option<f64>, mode: Option<Mode>) -> TrainConfig {
    let mut tc = config.train.clone();
    tc.seed = seed;
    if let Some(s) = sigma {
        tc.sigma = s;
    }
    if let Some(m) = mode {
        tc.mode = m;
    }
    tc
}

pub fn build_model(model: &ModelConfig, splits: &Splits, seed: u64) -> CliResult<E2eModel> {
    let vocab = Vocab::from_examples(splits.all());
    Ok(E2eModel::new(model.clone(), vocab, seed)?)
}

/// Trains one model on `splits` and writes the checkpoint, the metrics log
/// and the stamp under `{run}/{sigma}/{seed}/`.
pub fn train_on(config: &RunConfig, splits: &Splits, run: &Path, tc: &TrainConfig, inputs: &[&Path]) -> CliResult<TrainSummary> {
    tc.validate()?;
    let mut model = build_model(&config.model, splits, tc.seed)?;
    let dev = (!splits.dev.is_empty()).then_some(splits.dev.as_slice());
    let outcome = train(&mut model, &splits.train, dev, tc)?;
    let dir = cell_dir(run, tc.sigma, tc.seed);
    write_jsonl(&dir.join(METRICS_LOG), &outcome.log)?;
    let ckpt = dir.join(CHECKPOINT);
    checkpoint::save(&model, &ckpt)?;
    let mut resolved = config.clone();
    resolved.train = tc.clone();
    resolved.model = model.config.clone();
    write_stamp(&dir, "train", Some(tc.seed), inputs, &resolved)?;
    Ok(TrainSummary {
        dir,
        checkpoint: ckpt,
        outcome,
        model,
    })
}

pub fn train_stage(config: &RunConfig, input: &Path, run: &Path, tc: &TrainConfig, hint: &str) -> CliResult<TrainSummary> {
    let splits = load_splits(input, &config.paths)?;
    require_pseudo(&splits, input, hint)?;
    if tc.mode != Mode::Full {
        require_labels(&splits, input, hint)?;
    }
    train_on(config, &splits, run, tc, &[input])
}

/// Final dev metric recorded in a metrics log.
pub fn final_dev_metric(log: &[StepLog]) -> Option<f64> {
    log.iter().rev().find_map(|l| l.dev_metric)
}

pub fn evaluate_model(model: &E2eModel, split: &[Example], mode: Mode, checkpoint_id: &str, out: Option<&Path>) -> CliResult<MetricsReport> {
    if mode == Mode::Silver {
        if let Some(ex) = split.iter().find(|e| e.silver.is_none()) {
            return Err(CliError::validation(anyhow::anyhow!(
                "example {} has no silver labels, which SILVER mode needs; run `afg label` first",
                ex.id
            )));
        }
    }
    let report = evaluate(model, split, mode, checkpoint_id, None)?;
    if let Some(dir) = out {
        write_json(&dir.join(REPORT), &report)?;
        write_jsonl(&dir.join(RECORDS), &report.records)?;
    }
    Ok(report)
}

pub fn eval_stage(
    config: &RunConfig,
    checkpoint_path: &Path,
    input: &Path,
    split: &str,
    mode: Mode,
    out: Option<&Path>,
) -> CliResult<MetricsReport> {
    let model = checkpoint::load(checkpoint_path)?;
    let splits = load_splits(input, &config.paths)?;
    let data = splits
        .get(split)
        .ok_or_else(|| CliError::validation(anyhow::anyhow!("unknown split `{split}` (train|dev|test)")))?;
    let report = evaluate_model(&model, data, mode, &checkpoint_path.display().to_string(), out)?;
    if let Some(dir) = out {
        write_stamp(dir, "eval", None, &[checkpoint_path, input], config)?;
    }
    Ok(report)
}

/// A tiny seeded model and two labeled examples: the setting of the
/// gradient check.
pub fn gradcheck_setup(seed: u64) -> CliResult<(E2eModel, Vec<Example>)> {
    let synth = SynthConfig {
        n_entities: 4,
        n_attributes: 2,
        values_per_attribute: 4,
        n_train: 2,
        n_dev: 1,
        n_test: 1,
        k: 2,
        max_extra_sentences: 0,
        ..SynthConfig::default()
    };
    let mut gen = synth_generate(&synth, seed)?;
    let sim = afg_core::pseudo::SimulatorConfig {
        seed,
        ..Default::default()
    };
    simulate_split(&mut gen.train, &sim, &gen.world, "train")?;
    label_split(&mut gen.train, &Default::default(), None)?;
    let batch: Vec<Example> = gen.train.into_iter().take(2).collect();
    let model_config = ModelConfig {
        d_model: 16,
        d_k: 16,
        d_ff: 32,
        n_heads: 2,
        n_layers_enc: 2,
        n_layers_dec: 2,
        max_input_len: 64,
        max_output_len: 8,
        ..ModelConfig::default()
    };
    let vocab = Vocab::from_examples(&batch);
    Ok((E2eModel::new(model_config, vocab, seed)?, batch))
}

pub const GRADCHECK_H: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-3;

pub fn gradcheck(seed: u64, sigma: f64) -> CliResult<GradcheckReport> {
    let (mut model, batch) = gradcheck_setup(seed)?;
    Ok(gradcheck_model(&mut model, &batch, Mode::E2e, sigma, GRADCHECK_H)?)
}
