//! Joint objective, the training loop and the σ sweep.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::eval::evaluate;
use crate::labeling::SilverLabels;
use crate::model::{lora_attach, ClsPrediction, E2eModel, EncoderStates, Mode};
use crate::numerics::{adam_step, gradcheck, AdamConfig, AdamState, GradcheckReport, Graph, ParamStore, Var};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub targets: Vec<String>,
    pub r: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub sigma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub lora: Option<LoraConfig>,
    pub precision: Precision,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    /// Every this many epochs, decode the training split and stop once it is
    /// fit exactly (EM and, in E2E mode, classification accuracy at 1). 0
    /// disables the check.
    pub fit_check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.2,
            lr: 1e-3,
            batch_size: 8,
            epochs: 3,
            seed: 0,
            mode: Mode::E2e,
            lora: None,
            precision: Precision::F64,
            grad_clip: 1.0,
            max_steps: None,
            fit_check_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::Config(format!("sigma must be in [0, 1], got {}", self.sigma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        if let Some(l) = &self.lora {
            if l.r == 0 || l.targets.is_empty() {
                return Err(Error::Config("lora needs r >= 1 and at least one target".into()));
            }
        }
        Ok(())
    }

    /// σ as applied to the loss: FULL mode has no classification term.
    pub fn effective_sigma(&self) -> f64 {
        if self.mode == Mode::E2e {
            self.sigma
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gen: f64,
    pub l_cls: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn new(l_gen: f64, l_cls: f64, sigma: f64) -> Self {
        LossBreakdown {
            l_gen,
            l_cls,
            l_total: loss_total(l_gen, l_cls, sigma),
        }
    }
}

/// `-log p(gold | input)` under teacher forcing.
pub fn loss_gen(model: &E2eModel, enc: &EncoderStates, gold: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Precondition("gold sequence is empty".into()));
    }
    Ok(-model.seq_log_prob(enc, gold)?)
}

/// Summed negative log-likelihood of the silver class for every passage and
/// the pseudo-answer.
pub fn loss_cls(pred: &ClsPrediction, silver: &SilverLabels) -> Result<f64> {
    if pred.epsilon.len() != silver.passage_labels.len() {
        return Err(Error::Shape {
            op: "loss_cls",
            lhs: alloc::vec![pred.epsilon.len()],
            rhs: alloc::vec![silver.passage_labels.len()],
        });
    }
    let nll = |p1: f64, label: u8| -> f64 {
        let p = if label == 1 { p1 } else { 1.0 - p1 };
        -libm::log(p)
    };
    let mut total = 0.0;
    for (&e, &l) in pred.epsilon.iter().zip(&silver.passage_labels) {
        total += nll(e, l);
    }
    Ok(total + nll(pred.xi, silver.pseudo_label))
}

pub fn loss_total(l_gen: f64, l_cls: f64, sigma: f64) -> f64 {
    (1.0 - sigma) * l_gen + sigma * l_cls
}

/// One metrics-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub l_gen: f64,
    pub l_cls: f64,
    pub l_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_metric: Option<f64>,
}

impl StepLog {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            l_gen: self.l_gen,
            l_cls: self.l_cls,
            l_total: self.l_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<StepLog>,
    pub steps: usize,
    /// Step at which the fit check first passed.
    pub fit_at: Option<usize>,
    pub final_dev_metric: Option<f64>,
}

fn check_inputs(split: &[Example], mode: Mode) -> Result<()> {
    if split.is_empty() {
        return Err(Error::Precondition("training split is empty".into()));
    }
    for ex in split {
        if ex.pseudo.is_none() {
            return Err(Error::Precondition(format!(
                "example {} has no pseudo-answer; run `pseudo` first",
                ex.id
            )));
        }
        if mode != Mode::Full && ex.silver.is_none() {
            return Err(Error::Precondition(format!(
                "example {} has no silver labels; run `label` first",
                ex.id
            )));
        }
    }
    Ok(())
}

/// Gradients and losses of one mini-batch, accumulated into the model's
/// gradient slots. Returns the batch-mean breakdown.
pub fn batch_gradients(model: &mut E2eModel, batch: &[&Example], mode: Mode, sigma: f64) -> Result<LossBreakdown> {
    let inv = 1.0 / batch.len() as f64;
    let (mut gen, mut cls) = (0.0, 0.0);
    for ex in batch {
        let mut g = Graph::new();
        let l = model.example_loss(&mut g, ex, mode, sigma)?;
        gen += g.value(l.gen).item()?;
        if let Some(c) = l.cls {
            cls += g.value(c).item()?;
        }
        let scaled = g.scale(l.total, inv);
        g.backward(scaled, &mut model.params)?;
    }
    Ok(LossBreakdown::new(gen * inv, cls * inv, sigma))
}

fn fits(model: &E2eModel, split: &[Example], mode: Mode) -> Result<bool> {
    let r = evaluate(model, split, mode, "", None)?;
    let cls_ok = mode != Mode::E2e || r.metrics.get("cls_accuracy").copied() == Some(1.0);
    Ok(r.primary_value() == 1.0 && cls_ok)
}

/// Trains in place. Each epoch visits the split in a seeded order, each step
/// averages per-example losses over the batch, back-propagates the weighted
/// objective, clips and applies Adam.
pub fn train(model: &mut E2eModel, split: &[Example], dev: Option<&[Example]>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_inputs(split, config.mode)?;
    if let Some(l) = &config.lora {
        if model.params.adapters().next().is_none() {
            let targets: Vec<&str> = l.targets.iter().map(String::as_str).collect();
            lora_attach(&mut model.params, &targets, l.r, l.alpha, config.seed)?;
        }
    }
    let sigma = config.effective_sigma();
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut rng = stream(config.seed, "train-order");
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut fit_at = None;
    let mut final_dev_metric = None;
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &split[i]).collect();
            let losses = batch_gradients(model, &batch, config.mode, sigma)?;
            if config.grad_clip > 0.0 {
                model.params.clip_grad_norm(config.grad_clip);
            }
            adam_step(&mut model.params, &mut adam)?;
            step += 1;
            log.push(StepLog {
                step,
                epoch,
                l_gen: losses.l_gen,
                l_cls: losses.l_cls,
                l_total: losses.l_total,
                dev_metric: None,
            });
        }
        if let Some(dev) = dev {
            let m = evaluate(model, dev, config.mode, "", None)?.primary_value();
            final_dev_metric = Some(m);
            if let Some(last) = log.last_mut() {
                last.dev_metric = Some(m);
            }
        }
        if config.fit_check_every > 0
            && (epoch + 1) % config.fit_check_every == 0
            && fits(model, split, config.mode)?
        {
            fit_at = Some(step);
            break;
        }
    }
    Ok(TrainOutcome {
        log,
        steps: step,
        fit_at,
        final_dev_metric,
    })
}

/// Finite-difference check of the batch-mean objective with respect to every
/// trainable weight of `model`.
pub fn gradcheck_model(model: &mut E2eModel, batch: &[Example], mode: Mode, sigma: f64, h: f64) -> Result<GradcheckReport> {
    if batch.is_empty() {
        return Err(Error::Precondition("gradcheck needs at least one example".into()));
    }
    let config = model.config.clone();
    let vocab = model.vocab.clone();
    let inv = 1.0 / batch.len() as f64;
    let build = |g: &mut Graph, store: &ParamStore| -> Result<Var> {
        let view = E2eModel {
            config: config.clone(),
            params: store.clone(),
            vocab: vocab.clone(),
        };
        let mut total: Option<Var> = None;
        for ex in batch {
            let l = view.example_loss(g, ex, mode, sigma)?;
            let l = g.scale(l.total, inv);
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        Ok(total.expect("batch is non-empty"))
    };
    gradcheck(&mut model.params, h, build)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
    pub values: Vec<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// Runs `cell(σ, seed)` for every grid point and aggregates per σ. The cell
/// trains one model and returns its dev metric.
pub fn sweep_sigma<F>(sigmas: &[f64], seeds: &[u64], mut cell: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64, u64) -> Result<f64>,
{
    if seeds.len() < 2 {
        return Err(Error::Config("a sigma sweep needs at least two seeds".into()));
    }
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::Config(format!("sigma must be in [0, 1], got {sigma}")));
        }
        let values = seeds
            .iter()
            .map(|&s| cell(sigma, s))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, std) = mean_std(&values);
        rows.push(SweepRow {
            sigma,
            mean,
            std,
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::LabelMethod;
    use crate::numerics::Tensor;
    use alloc::vec;

    fn silver(labels: Vec<u8>, pseudo: u8) -> SilverLabels {
        SilverLabels {
            scores: labels.iter().map(|&l| f64::from(l)).collect(),
            passage_labels: labels,
            pseudo_label: pseudo,
            method: LabelMethod::Strinc,
            pseudo_score: f64::from(pseudo),
        }
    }

    fn pred(eps: Vec<f64>, xi: f64) -> ClsPrediction {
        ClsPrediction {
            logits: Tensor::zeros(eps.len() + 1, 2),
            epsilon: eps,
            xi,
        }
    }

    #[test]
    fn loss_total_arithmetic() {
        assert!((loss_total(2.0, 1.0, 0.2) - 1.8).abs() < 1e-15);
        assert_eq!(loss_total(2.5, 7.0, 0.0), 2.5);
        assert_eq!(loss_total(2.5, 7.0, 1.0), 7.0);
    }

    #[test]
    fn loss_cls_examples() {
        let l = loss_cls(&pred(vec![0.5], 0.5), &silver(vec![1], 0)).unwrap();
        assert!((l - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(loss_cls(&pred(vec![1.0, 0.0], 1.0), &silver(vec![1, 0], 1)).unwrap(), 0.0);
        assert!(loss_cls(&pred(vec![0.5], 0.5), &silver(vec![1, 0], 0)).is_err());
    }

    #[test]
    fn sweep_aggregation() {
        assert!(sweep_sigma(&[], &[1, 2], |_, _| Ok(0.0)).unwrap().is_empty());
        assert!(sweep_sigma(&[0.2], &[1], |_, _| Ok(0.0)).is_err());
        let rows = sweep_sigma(&[0.2], &[1, 2, 3], |_, s| Ok(s as f64)).unwrap();
        assert_eq!(rows[0].mean, 2.0);
        assert_eq!(rows[0].std, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            sigma: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let full = TrainConfig {
            mode: Mode::Full,
            ..TrainConfig::default()
        };
        assert_eq!(full.effective_sigma(), 0.0);
    }
}
