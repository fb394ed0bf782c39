//! Pseudo-answers: prompt rendering, a seeded answer simulator, import
//! merging, and recall.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, SyntheticWorld, TaskKind, REFUTES, SUPPORTS};
use crate::rng::{stream, SeededRng};
use crate::text::{contains_any, tokenize_with_spans};
use crate::{Error, Result};

pub const MAX_PSEUDO_TOKENS: usize = 200;

const CONCISE_TEMPLATE: &str = include_str!("../data/prompts/concise.txt");
const SPECULATIVE_TEMPLATE: &str = include_str!("../data/prompts/speculative.txt");
const REASONED_TEMPLATE: &str = include_str!("../data/prompts/reasoned.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Concise,
    Speculative,
    Reasoned,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Concise, PromptKind::Speculative, PromptKind::Reasoned];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Concise => "concise",
            PromptKind::Speculative => "speculative",
            PromptKind::Reasoned => "reasoned",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::Concise => CONCISE_TEMPLATE,
            PromptKind::Speculative => SPECULATIVE_TEMPLATE,
            PromptKind::Reasoned => REASONED_TEMPLATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoSource {
    Simulator,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoAnswer {
    pub text: String,
    pub prompt_kind: PromptKind,
    pub source: PseudoSource,
}

impl PseudoAnswer {
    pub fn validate(&self) -> core::result::Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("pseudo-answer text is empty".into());
        }
        let n = tokenize_with_spans(&self.text).len();
        if n > MAX_PSEUDO_TOKENS {
            return Err(format!("pseudo-answer has {n} tokens, limit is {MAX_PSEUDO_TOKENS}"));
        }
        Ok(())
    }
}

/// Fills the prompt template for `kind` with the query.
pub fn render_prompt(kind: PromptKind, query: &str) -> Result<String> {
    if query.trim().is_empty() {
        return Err(Error::Precondition("render_prompt: query is empty".into()));
    }
    Ok(kind.template().replace("{query}", query))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PCorrect {
    pub concise: f64,
    pub speculative: f64,
    pub reasoned: f64,
}

impl PCorrect {
    pub fn get(&self, kind: PromptKind) -> f64 {
        match kind {
            PromptKind::Concise => self.concise,
            PromptKind::Speculative => self.speculative,
            PromptKind::Reasoned => self.reasoned,
        }
    }

    pub fn uniform(p: f64) -> Self {
        PCorrect {
            concise: p,
            speculative: p,
            reasoned: p,
        }
    }
}

impl Default for PCorrect {
    fn default() -> Self {
        PCorrect {
            concise: 0.4,
            speculative: 0.45,
            reasoned: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub p_correct: PCorrect,
    /// Relative frequency of concise, speculative and reasoned prompts.
    pub kind_weights: [f64; 3],
    pub hedge_templates: Vec<String>,
    pub rationale_template: String,
    pub fact_rationale_template: String,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            p_correct: PCorrect::default(),
            kind_weights: [1.0, 1.0, 1.0],
            hedge_templates: alloc::vec![
                "perhaps it is {answer} .".to_string(),
                "it might be {answer} .".to_string(),
                "most likely {answer} .".to_string(),
            ],
            rationale_template: "{answer} . because the {attr} of {entity} is {answer} .".to_string(),
            fact_rationale_template: "{answer} . the claim about the {attr} of {entity} was checked .".to_string(),
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        for k in PromptKind::ALL {
            let p = self.p_correct.get(k);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("p_correct.{} must be in [0, 1]", k.as_str())));
            }
        }
        if self.kind_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.kind_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("kind_weights must be non-negative with a positive sum".into()));
        }
        if self.hedge_templates.is_empty() {
            return Err(Error::Config("at least one hedge template is required".into()));
        }
        Ok(())
    }

    fn pick_kind(&self, rng: &mut SeededRng) -> PromptKind {
        let total: f64 = self.kind_weights.iter().sum();
        let mut x = rng.gen::<f64>() * total;
        for (k, w) in PromptKind::ALL.iter().zip(self.kind_weights) {
            if x < w {
                return *k;
            }
            x -= w;
        }
        PromptKind::Reasoned
    }
}

/// Simulates one pseudo-answer: with probability `p_correct[kind]` it states
/// the gold answer, otherwise a wrong value of the same attribute (or the
/// opposite verdict).
pub fn simulate_pseudo(
    example: &Example,
    kind: PromptKind,
    config: &SimulatorConfig,
    world: &SyntheticWorld,
    rng: &mut SeededRng,
) -> Result<PseudoAnswer> {
    let (entity, attr) = world.parse_query(&example.query).ok_or_else(|| {
        Error::Precondition(format!(
            "example {} is not from the synthetic world; supply pseudo-answers with import_pseudo",
            example.id
        ))
    })?;
    let correct = rng.gen_bool(config.p_correct.get(kind));
    let answer = match example.task_kind {
        TaskKind::Fact => {
            let gold = example.gold_answers[0].as_str();
            let flipped = if gold == SUPPORTS { REFUTES } else { SUPPORTS };
            if correct { gold } else { flipped }.to_string()
        }
        _ => {
            if correct {
                example.gold_answers[0].clone()
            } else {
                let pool = &world.value_pools[&attr];
                let wrong: Vec<&String> = pool
                    .iter()
                    .filter(|v| !contains_any(v, &example.gold_answers))
                    .collect();
                if wrong.is_empty() {
                    return Err(Error::Precondition(format!(
                        "no distractor value available for example {}",
                        example.id
                    )));
                }
                wrong[rng.gen_range(0..wrong.len())].clone()
            }
        }
    };
    let fill = |t: &str| {
        t.replace("{answer}", &answer)
            .replace("{attr}", &attr)
            .replace("{entity}", &entity)
    };
    let text = match kind {
        PromptKind::Concise => answer.clone(),
        PromptKind::Speculative => {
            let t = &config.hedge_templates[rng.gen_range(0..config.hedge_templates.len())];
            fill(t)
        }
        PromptKind::Reasoned => {
            if example.task_kind == TaskKind::Fact {
                fill(&config.fact_rationale_template)
            } else {
                fill(&config.rationale_template)
            }
        }
    };
    Ok(PseudoAnswer {
        text,
        prompt_kind: kind,
        source: PseudoSource::Simulator,
    })
}

/// Fills `pseudo` for every example, drawing the prompt kind from the
/// configured mixture. Deterministic in `(config.seed, split_name)`.
pub fn simulate_split(
    split: &mut [Example],
    config: &SimulatorConfig,
    world: &SyntheticWorld,
    split_name: &str,
) -> Result<()> {
    config.validate()?;
    let mut rng = stream(config.seed, &format!("pseudo-{split_name}"));
    for ex in split.iter_mut() {
        let kind = config.pick_kind(&mut rng);
        ex.pseudo = Some(simulate_pseudo(ex, kind, config, world, &mut rng)?);
    }
    Ok(())
}

/// One line of an imported pseudo-answer file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoRecord {
    pub id: String,
    pub text: String,
    pub prompt_kind: PromptKind,
}

/// Cuts `text` after `max_tokens` tokens, keeping the original spelling.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> Option<String> {
    let spans = tokenize_with_spans(text);
    if spans.len() <= max_tokens {
        return None;
    }
    let end = spans[max_tokens - 1].1.end;
    Some(text[..end].to_string())
}

/// Merges imported pseudo-answers by id. Returns the ids whose text was cut
/// to the token limit.
pub fn merge_pseudo(records: &[PseudoRecord], split: &mut [Example]) -> Result<Vec<String>> {
    let index: BTreeMap<String, usize> = split
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.clone(), i))
        .collect();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for r in records {
        if !index.contains_key(r.id.as_str()) {
            return Err(Error::Precondition(format!("import_pseudo: unknown id `{}`", r.id)));
        }
        if seen.insert(r.id.as_str(), ()).is_some() {
            return Err(Error::Precondition(format!("import_pseudo: duplicate id `{}`", r.id)));
        }
        if r.text.trim().is_empty() {
            return Err(Error::Precondition(format!("import_pseudo: empty text for `{}`", r.id)));
        }
    }
    let mut truncated = Vec::new();
    for r in records {
        let text = match truncate_tokens(&r.text, MAX_PSEUDO_TOKENS) {
            Some(t) => {
                log::warn!("pseudo-answer for {} truncated to {MAX_PSEUDO_TOKENS} tokens", r.id);
                truncated.push(r.id.clone());
                t
            }
            None => r.text.clone(),
        };
        split[index[r.id.as_str()]].pseudo = Some(PseudoAnswer {
            text,
            prompt_kind: r.prompt_kind,
            source: PseudoSource::Imported,
        });
    }
    Ok(truncated)
}

/// Fraction of examples whose pseudo-answer contains a gold answer under the
/// string-inclusion rule.
pub fn pseudo_recall(split: &[Example]) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in split {
        let p = ex.pseudo.as_ref().ok_or_else(|| {
            Error::Precondition(format!("example {} has no pseudo-answer", ex.id))
        })?;
        if contains_any(&p.text, &ex.gold_answers) {
            hits += 1;
        }
    }
    Ok(hits as f64 / split.len() as f64)
}
