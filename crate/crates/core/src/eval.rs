//! Answer metrics and split-level evaluation of a model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, TaskKind};
use crate::model::{E2eModel, Mode};
use crate::text::contains_any;
use crate::{Error, Result};

pub use crate::text::normalize_answer;

pub fn exact_match(pred: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(pred);
    u8::from(golds.iter().any(|g| normalize_answer(g) == p))
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = crate::text::normalized_tokens(pred);
    let g = crate::text::normalized_tokens(gold);
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-multiset F1 against the best-matching gold. Two empty token lists
/// match perfectly; one empty side scores zero.
pub fn unigram_f1(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(pred, g)).fold(0.0, f64::max)
}

/// Verdict match after normalization.
pub fn accuracy(pred: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(pred) == normalize_answer(gold))
}

/// 1 iff a gold answer occurs in a passage ranked `<= k`.
pub fn topk_recall(example: &Example, k: usize) -> u8 {
    u8::from(
        example
            .passages
            .iter()
            .any(|p| p.rank <= k && contains_any(&p.text, &example.gold_answers)),
    )
}

pub fn split_topk_recall(split: &[Example], k: usize) -> f64 {
    if split.is_empty() {
        return 0.0;
    }
    split.iter().map(|e| f64::from(topk_recall(e, k))).sum::<f64>() / split.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Em,
    F1,
    Accuracy,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Em => "em",
            Metric::F1 => "f1",
            Metric::Accuracy => "accuracy",
        }
    }

    /// The headline metric of a task: EM for QA, accuracy for fact
    /// verification, F1 for dialogue.
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Qa => Metric::Em,
            TaskKind::Fact => Metric::Accuracy,
            TaskKind::Dialogue => Metric::F1,
        }
    }

    pub fn check(self, task: TaskKind) -> Result<()> {
        let ok = match self {
            Metric::Em | Metric::F1 => task != TaskKind::Fact,
            Metric::Accuracy => task == TaskKind::Fact,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "metric {} does not apply to {} examples",
                self.as_str(),
                task.as_str()
            )))
        }
    }

    pub fn score(self, pred: &str, golds: &[String]) -> f64 {
        match self {
            Metric::Em => f64::from(exact_match(pred, golds)),
            Metric::F1 => unigram_f1(pred, golds),
            Metric::Accuracy => f64::from(golds.first().map_or(0, |g| accuracy(pred, g))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub task_kind: TaskKind,
    pub prediction: String,
    pub golds: Vec<String>,
    pub score: f64,
    pub f1: f64,
    /// Classifier agreement with the silver labels (E2E mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cls_correct: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub checkpoint: String,
    pub mode: Mode,
    pub n_examples: usize,
    /// Aggregate values in `[0, 1]`, keyed by metric name.
    pub metrics: BTreeMap<String, f64>,
    /// Name of the headline metric for this split.
    pub primary: String,
    #[serde(skip)]
    pub records: Vec<ExampleRecord>,
}

impl MetricsReport {
    pub fn primary_value(&self) -> f64 {
        self.metrics.get(&self.primary).copied().unwrap_or(0.0)
    }
}

/// Decodes every example greedily and scores it with its task's metric.
/// `metric` overrides the task default and must suit every example.
pub fn evaluate(
    model: &E2eModel,
    split: &[Example],
    mode: Mode,
    checkpoint: &str,
    metric: Option<Metric>,
) -> Result<MetricsReport> {
    let mut records = Vec::with_capacity(split.len());
    let mut sums: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    let (mut cls_hit, mut cls_total) = (0usize, 0usize);
    for ex in split {
        let m = metric.unwrap_or_else(|| Metric::for_task(ex.task_kind));
        m.check(ex.task_kind)?;
        let input = model.pack(ex, mode)?;
        let enc = model.encode(&input)?;
        let out = model.generate_greedy(&enc, model.config.max_output_len)?;
        let prediction = model.vocab.decode(&out.tokens);
        let score = m.score(&prediction, &ex.gold_answers);
        *sums.entry(m.as_str()).or_default() += score;
        *counts.entry(m.as_str()).or_default() += 1;
        let f1 = unigram_f1(&prediction, &ex.gold_answers);
        *sums.entry("f1_all").or_default() += f1;
        let cls_correct = match (&ex.silver, mode) {
            (Some(_), Mode::E2e) => {
                let pred = model.cls_forward(&enc)?.labels();
                let gold = crate::model::cls_targets(ex, &input).expect("silver present");
                let hit = pred.iter().zip(&gold).filter(|(p, g)| usize::from(**p) == **g).count();
                cls_hit += hit;
                cls_total += gold.len();
                Some((hit, gold.len()))
            }
            _ => None,
        };
        records.push(ExampleRecord {
            id: ex.id.clone(),
            task_kind: ex.task_kind,
            prediction,
            golds: ex.gold_answers.clone(),
            score,
            f1,
            cls_correct,
        });
    }
    let mut metrics = BTreeMap::new();
    for (name, sum) in &sums {
        let n = if *name == "f1_all" { split.len() } else { counts[name] };
        if n > 0 {
            let key = if *name == "f1_all" { "f1" } else { name };
            metrics.insert(key.to_string(), sum / n as f64);
        }
    }
    if cls_total > 0 {
        metrics.insert("cls_accuracy".into(), cls_hit as f64 / cls_total as f64);
    }
    let primary = metric
        .or_else(|| split.first().map(|e| Metric::for_task(e.task_kind)))
        .unwrap_or(Metric::Em)
        .as_str()
        .to_string();
    Ok(MetricsReport {
        checkpoint: checkpoint.into(),
        mode,
        n_examples: split.len(),
        metrics,
        primary,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn g(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn metric_examples() {
        assert_eq!(normalize_answer("The Eiffel Tower."), "eiffel tower");
        assert_eq!(exact_match("Paris.", &g(&["paris"])), 1);
        assert_eq!(exact_match("in paris", &g(&["paris"])), 0);
        assert_eq!(exact_match("y", &g(&["x", "y"])), 1);
        // Articles are dropped before counting: "b c" vs "b d".
        assert_eq!(unigram_f1("a b c", &g(&["a b d"])), 0.5);
        assert!((unigram_f1("x y z", &g(&["x y w"])) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(unigram_f1("same words", &g(&["same words"])), 1.0);
        assert_eq!(accuracy("SUPPORTS", "supports"), 1);
        assert_eq!(accuracy("REFUTES", "SUPPORTS"), 0);
    }

    #[test]
    fn f1_multiset_counts_duplicates() {
        // pred "x x y", gold "x y y": overlap 2 of 3 on each side.
        assert!((unigram_f1("x x y", &g(&["x y y"])) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(unigram_f1("", &g(&["x"])), 0.0);
        assert_eq!(unigram_f1("the", &g(&["a"])), 1.0);
    }

    #[test]
    fn metric_task_mismatch() {
        assert!(Metric::Accuracy.check(TaskKind::Qa).is_err());
        assert!(Metric::Em.check(TaskKind::Fact).is_err());
        assert!(Metric::Em.check(TaskKind::Qa).is_ok());
        assert_eq!(vec![Metric::for_task(TaskKind::Fact)], vec![Metric::Accuracy]);
    }
}
