//! Silver "contains the answer" labels for passages and pseudo-answers.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::text::{contains_any, normalized_tokens, split_sentences};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMethod {
    Strinc,
    Lexical,
    Cxmi,
}

impl LabelMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMethod::Strinc => "strinc",
            LabelMethod::Lexical => "lexical",
            LabelMethod::Cxmi => "cxmi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub method: LabelMethod,
    /// Likelihood-ratio threshold.
    pub t0: f64,
    /// Lexical answer-recall threshold.
    pub t_lex: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            method: LabelMethod::Strinc,
            t0: 0.5,
            t_lex: 0.5,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::Config("t0 must be in (0, 1)".into()));
        }
        if !(self.t_lex > 0.0 && self.t_lex <= 1.0) {
            return Err(Error::Config("t_lex must be in (0, 1]".into()));
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        match self.method {
            LabelMethod::Strinc => 1.0,
            LabelMethod::Lexical => self.t_lex,
            LabelMethod::Cxmi => self.t0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilverLabels {
    pub passage_labels: Vec<u8>,
    pub pseudo_label: u8,
    pub method: LabelMethod,
    pub scores: Vec<f64>,
    pub pseudo_score: f64,
}

impl SilverLabels {
    pub fn validate(&self, k: usize) -> core::result::Result<(), String> {
        if self.passage_labels.len() != k || self.scores.len() != k {
            return Err(format!(
                "expected {k} labels and scores, got {} and {}",
                self.passage_labels.len(),
                self.scores.len()
            ));
        }
        let labels = self.passage_labels.iter().chain(core::iter::once(&self.pseudo_label));
        if labels.clone().any(|&l| l > 1) {
            return Err("labels must be 0 or 1".into());
        }
        let scores = self.scores.iter().chain(core::iter::once(&self.pseudo_score));
        for (&s, &l) in scores.zip(labels) {
            let ok = match self.method {
                LabelMethod::Strinc => (s == 0.0 || s == 1.0) && (l == 1) == (s == 1.0),
                LabelMethod::Lexical => (0.0..=1.0).contains(&s),
                LabelMethod::Cxmi => s > 0.0 && s < 1.0,
            };
            if !ok {
                return Err(format!("score {s} / label {l} invalid for method {}", self.method.as_str()));
            }
        }
        Ok(())
    }

    /// Label per passage followed by the pseudo-answer label.
    pub fn all_labels(&self) -> Vec<u8> {
        let mut v = self.passage_labels.clone();
        v.push(self.pseudo_label);
        v
    }
}

/// 1 iff any normalized gold answer is a substring of the normalized context.
pub fn strinc_label(context: &str, gold_answers: &[String]) -> u8 {
    u8::from(contains_any(context, gold_answers))
}

/// Maximum over sentences and gold answers of the fraction of distinct answer
/// tokens present in the sentence.
pub fn lexical_score(context: &str, gold_answers: &[String]) -> Result<f64> {
    let answers: Vec<BTreeSet<String>> = gold_answers
        .iter()
        .map(|a| normalized_tokens(a).into_iter().collect::<BTreeSet<_>>())
        .collect();
    if answers.iter().all(BTreeSet::is_empty) {
        return Err(Error::Precondition(
            "lexical_label: gold answer is empty after normalization".into(),
        ));
    }
    let mut best = 0.0f64;
    for sentence in split_sentences(context) {
        let toks: BTreeSet<String> = normalized_tokens(sentence).into_iter().collect();
        for a in answers.iter().filter(|a| !a.is_empty()) {
            let hit = a.intersection(&toks).count() as f64 / a.len() as f64;
            best = best.max(hit);
        }
    }
    Ok(best)
}

pub fn lexical_label(context: &str, gold_answers: &[String], t_lex: f64) -> Result<(u8, f64)> {
    let s = lexical_score(context, gold_answers)?;
    Ok((u8::from(s >= t_lex), s))
}

/// Teacher-forced answer likelihood, as provided by the generator.
pub trait SequenceScorer {
    /// `log p(answer | query, context)`; `context = None` conditions on the
    /// query alone.
    fn answer_log_prob(&self, query: &str, context: Option<&str>, answer: &str) -> Result<f64>;
}

/// Maps two log-likelihoods to `r / (1 + r)` with `r = exp(with - without)`,
/// clamped away from 0 and 1.
pub fn cxmi_from_log_probs(with_context: f64, without_context: f64) -> f64 {
    let d = with_context - without_context;
    let s = if d >= 0.0 {
        1.0 / (1.0 + libm::exp(-d))
    } else {
        let e = libm::exp(d);
        e / (1.0 + e)
    };
    s.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

pub fn cxmi_score(
    query: &str,
    gold_answer: &str,
    context: Option<&str>,
    lm: &dyn SequenceScorer,
) -> Result<f64> {
    if normalized_tokens(gold_answer).is_empty() {
        return Err(Error::Precondition("cxmi_score: gold answer is empty".into()));
    }
    let with = lm.answer_log_prob(query, context, gold_answer)?;
    let without = lm.answer_log_prob(query, None, gold_answer)?;
    Ok(cxmi_from_log_probs(with, without))
}

fn score_context(
    example: &Example,
    context: &str,
    config: &LabelConfig,
    lm: Option<&dyn SequenceScorer>,
) -> Result<f64> {
    match config.method {
        LabelMethod::Strinc => Ok(f64::from(strinc_label(context, &example.gold_answers))),
        LabelMethod::Lexical => lexical_score(context, &example.gold_answers),
        LabelMethod::Cxmi => {
            let lm = lm.ok_or_else(|| {
                Error::Precondition("cxmi labeling needs a trained generator checkpoint".into())
            })?;
            let mut best = 0.0f64;
            for g in &example.gold_answers {
                best = best.max(cxmi_score(&example.query, g, Some(context), lm)?);
            }
            Ok(best)
        }
    }
}

/// Labels every passage and the pseudo-answer of one example.
pub fn label_example(
    example: &Example,
    config: &LabelConfig,
    lm: Option<&dyn SequenceScorer>,
) -> Result<SilverLabels> {
    config.validate()?;
    let pseudo = example.pseudo.as_ref().ok_or_else(|| {
        Error::Precondition(format!(
            "example {} has no pseudo-answer; run the pseudo stage first",
            example.id
        ))
    })?;
    let threshold = config.threshold();
    let mut scores = Vec::with_capacity(example.k());
    for p in &example.passages {
        scores.push(score_context(example, &p.text, config, lm)?);
    }
    let pseudo_score = score_context(example, &pseudo.text, config, lm)?;
    let label = |s: f64| u8::from(s >= threshold);
    Ok(SilverLabels {
        passage_labels: scores.iter().map(|&s| label(s)).collect(),
        pseudo_label: label(pseudo_score),
        method: config.method,
        scores,
        pseudo_score,
    })
}

/// Labels and attaches silver labels to every example of a split.
pub fn label_split(
    split: &mut [Example],
    config: &LabelConfig,
    lm: Option<&dyn SequenceScorer>,
) -> Result<()> {
    for ex in split.iter_mut() {
        ex.silver = Some(label_example(ex, config, lm)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn golds(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn strinc_examples() {
        assert_eq!(strinc_label("The capital of France is Paris.", &golds(&["Paris"])), 1);
        assert_eq!(strinc_label("Lyon is a large city.", &golds(&["Paris"])), 0);
        assert_eq!(
            strinc_label("the city of light shines", &golds(&["paris", "city of light"])),
            1
        );
    }

    #[test]
    fn lexical_examples() {
        assert_eq!(
            lexical_label("paris is the capital", &golds(&["paris france"]), 0.5).unwrap(),
            (1, 0.5)
        );
        assert_eq!(
            lexical_label("paris france", &golds(&["paris france"]), 0.5).unwrap(),
            (1, 1.0)
        );
        assert_eq!(
            lexical_label("rome. paris france!", &golds(&["paris france"]), 0.5).unwrap().1,
            1.0
        );
        assert!(lexical_label("text", &golds(&["the"]), 0.5).is_err());
    }

    #[test]
    fn cxmi_arithmetic() {
        let s = cxmi_from_log_probs(-1.0, -2.0);
        assert!((s - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(cxmi_from_log_probs(-3.0, -3.0), 0.5);
        assert!(cxmi_from_log_probs(0.0, -1000.0) < 1.0);
        assert!(cxmi_from_log_probs(-1000.0, 0.0) > 0.0);
    }

    struct Fixed(f64, f64);
    impl SequenceScorer for Fixed {
        fn answer_log_prob(&self, _: &str, ctx: Option<&str>, _: &str) -> Result<f64> {
            Ok(if ctx.is_some() { self.0 } else { self.1 })
        }
    }

    #[test]
    fn cxmi_threshold_uses_ge() {
        let lm = Fixed(-2.0, -2.0);
        let s = cxmi_score("q", "paris", Some("c"), &lm).unwrap();
        assert_eq!(s, 0.5);
        assert!(cxmi_score("q", " . ", Some("c"), &lm).is_err());
    }

    #[test]
    fn silver_validation() {
        let s = SilverLabels {
            passage_labels: vec![1, 0],
            pseudo_label: 0,
            method: LabelMethod::Strinc,
            scores: vec![1.0, 0.0],
            pseudo_score: 0.0,
        };
        assert!(s.validate(2).is_ok());
        assert!(s.validate(3).is_err());
        let bad = SilverLabels {
            passage_labels: vec![0, 0],
            ..s
        };
        assert!(bad.validate(2).is_err());
    }
}
