//! Examples, passages, a seeded synthetic world, and a lexical retriever.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::labeling::SilverLabels;
use crate::pseudo::PseudoAnswer;
use crate::rng::{stream, SeededRng};
use crate::text::{contains_any, normalized_tokens};
use crate::{Error, Result};

pub const SUPPORTS: &str = "SUPPORTS";
pub const REFUTES: &str = "REFUTES";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Qa,
    Fact,
    Dialogue,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Qa => "qa",
            TaskKind::Fact => "fact",
            TaskKind::Dialogue => "dialogue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Passage {
    pub pid: String,
    pub title: String,
    pub text: String,
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub task_kind: TaskKind,
    pub query: String,
    pub gold_answers: Vec<String>,
    pub passages: Vec<Passage>,
    pub pseudo: Option<PseudoAnswer>,
    pub silver: Option<SilverLabels>,
}

impl Example {
    pub fn k(&self) -> usize {
        self.passages.len()
    }

    /// Checks every record invariant; the error names the example and field.
    pub fn validate(&self) -> Result<()> {
        let id = self.id.as_str();
        if self.id.is_empty() {
            return Err(Error::invariant(id, "id", "empty"));
        }
        if self.query.trim().is_empty() {
            return Err(Error::invariant(id, "query", "empty"));
        }
        if self.gold_answers.is_empty() {
            return Err(Error::invariant(id, "gold_answers", "must be non-empty"));
        }
        if self.task_kind == TaskKind::Fact {
            if self.gold_answers.len() != 1 {
                return Err(Error::invariant(
                    id,
                    "gold_answers",
                    "fact examples carry exactly one verdict",
                ));
            }
            let g = self.gold_answers[0].as_str();
            if g != SUPPORTS && g != REFUTES {
                return Err(Error::invariant(
                    id,
                    "gold_answers",
                    format!("fact verdict must be SUPPORTS or REFUTES, got {g:?}"),
                ));
            }
        }
        if self.passages.is_empty() {
            return Err(Error::invariant(id, "passages", "at least one passage required"));
        }
        let k = self.passages.len();
        let mut seen = alloc::vec![false; k];
        for p in &self.passages {
            if p.text.trim().is_empty() {
                return Err(Error::invariant(id, "passages.text", format!("passage {} is empty", p.pid)));
            }
            if p.rank == 0 || p.rank > k || seen[p.rank - 1] {
                return Err(Error::invariant(
                    id,
                    "passages.rank",
                    format!("ranks must be a permutation of 1..={k}"),
                ));
            }
            seen[p.rank - 1] = true;
            if !p.score.is_finite() {
                return Err(Error::invariant(id, "passages.score", "non-finite score"));
            }
        }
        let by_rank = self.passages_by_rank();
        if by_rank.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(Error::invariant(
                id,
                "passages.score",
                "scores must be non-increasing in rank",
            ));
        }
        if let Some(p) = &self.pseudo {
            p.validate().map_err(|reason| Error::invariant(id, "pseudo", reason))?;
        }
        if let Some(s) = &self.silver {
            s.validate(k).map_err(|reason| Error::invariant(id, "silver", reason))?;
        }
        Ok(())
    }

    pub fn passages_by_rank(&self) -> Vec<&Passage> {
        let mut v: Vec<&Passage> = self.passages.iter().collect();
        v.sort_by_key(|p| p.rank);
        v
    }
}

// ---------------------------------------------------------------------------
// Synthetic world
// ---------------------------------------------------------------------------

const ATTRIBUTE_NAMES: [&str; 8] = [
    "capital", "river", "founder", "language", "currency", "mountain", "festival", "harbor",
];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const QUERY_TEMPLATE: &str = "what is the {attr} of {entity} ?";
const FACT_TEMPLATE: &str = "the {attr} of {entity} is {value} .";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_attributes: usize,
    pub values_per_attribute: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Passages per example.
    pub k: usize,
    /// Probability that the gold-evidence passage is withheld.
    pub distractor_rate: f64,
    /// Fraction of examples that are fact-verification statements.
    pub fact_fraction: f64,
    /// Probability of including a same-entity, other-attribute passage.
    pub hard_negative_rate: f64,
    /// Extra sentences (about other attributes) per passage, at most.
    pub max_extra_sentences: usize,
    pub vocab_cap: usize,
    /// Draw every attribute value afresh for each example, so an answer can
    /// only be recovered from that example's passages or pseudo-answer.
    pub resample_values: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_entities: 48,
            n_attributes: 4,
            values_per_attribute: 16,
            n_train: 400,
            n_dev: 100,
            n_test: 100,
            k: 5,
            distractor_rate: 0.3,
            fact_fraction: 0.0,
            hard_negative_rate: 0.0,
            max_extra_sentences: 1,
            vocab_cap: 1024,
            resample_values: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_entities < 4 {
            return bad("n_entities must be >= 4");
        }
        if self.n_attributes == 0 || self.n_attributes > ATTRIBUTE_NAMES.len() {
            return bad("n_attributes must be in 1..=8");
        }
        if self.values_per_attribute < 2 {
            return bad("values_per_attribute must be >= 2");
        }
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return bad("every split needs at least one example");
        }
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        for (name, v) in [
            ("distractor_rate", self.distractor_rate),
            ("fact_fraction", self.fact_fraction),
            ("hard_negative_rate", self.hard_negative_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.max_extra_sentences > 5 {
            return bad("max_extra_sentences must be <= 5 (passages hold 1-6 sentences)");
        }
        if self.n_entities * self.n_attributes < 3 {
            return bad("world needs at least three facts to split");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldPassage {
    pub pid: String,
    pub entity: String,
    pub attribute: String,
    pub title: String,
    pub text: String,
    /// Attributes of the trailing sentences, in order.
    #[serde(default)]
    pub extra: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub entities: Vec<String>,
    pub attribute_names: Vec<String>,
    /// Candidate values per attribute (pools are disjoint).
    pub value_pools: BTreeMap<String, Vec<String>>,
    /// entity -> attribute -> value.
    pub attributes: BTreeMap<String, BTreeMap<String, String>>,
    pub templates: BTreeMap<String, String>,
    pub passages: Vec<WorldPassage>,
}

fn fill(template: &str, attr: &str, entity: &str, value: &str) -> String {
    template
        .replace("{attr}", attr)
        .replace("{entity}", entity)
        .replace("{value}", value)
}

impl SyntheticWorld {
    pub fn build(config: &SynthConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "world");
        let attribute_names: Vec<String> = ATTRIBUTE_NAMES[..config.n_attributes]
            .iter()
            .map(|s| s.to_string())
            .collect();

        let mut templates = BTreeMap::new();
        templates.insert("query".to_string(), QUERY_TEMPLATE.to_string());
        templates.insert("fact".to_string(), FACT_TEMPLATE.to_string());

        // Reserved words: anything a template or attribute contributes.
        let mut words: BTreeSet<String> = BTreeSet::new();
        for t in templates.values() {
            for w in normalized_tokens(t) {
                if !w.contains('{') {
                    words.insert(w);
                }
            }
        }
        for a in &attribute_names {
            words.insert(a.clone());
        }
        for w in ["is", "what", "of", "supports", "refutes"] {
            words.insert(w.to_string());
        }
        let mut names: Vec<String> = Vec::new();

        let entities = (0..config.n_entities)
            .map(|_| fresh_name(&mut rng, 3, false, &mut words, &mut names))
            .collect::<Result<Vec<_>>>()?;
        let mut value_pools = BTreeMap::new();
        for a in &attribute_names {
            let pool = (0..config.values_per_attribute)
                .map(|_| fresh_name(&mut rng, 2, true, &mut words, &mut names))
                .collect::<Result<Vec<_>>>()?;
            value_pools.insert(a.clone(), pool);
        }

        let mut attributes = BTreeMap::new();
        for e in &entities {
            let mut m = BTreeMap::new();
            for a in &attribute_names {
                let pool = &value_pools[a];
                m.insert(a.clone(), pool[rng.gen_range(0..pool.len())].clone());
            }
            attributes.insert(e.clone(), m);
        }

        let mut passages = Vec::new();
        for e in &entities {
            for a in &attribute_names {
                let facts: &BTreeMap<String, String> = &attributes[e];
                let mut text = fill(FACT_TEMPLATE, a, e, &facts[a]);
                let mut others: Vec<&String> = attribute_names.iter().filter(|o| *o != a).collect();
                others.shuffle(&mut rng);
                let n_extra = rng.gen_range(0..=config.max_extra_sentences).min(others.len());
                for o in &others[..n_extra] {
                    text.push(' ');
                    text.push_str(&fill(FACT_TEMPLATE, o, e, &facts[*o]));
                }
                passages.push(WorldPassage {
                    pid: format!("{e}-{a}"),
                    entity: e.clone(),
                    attribute: a.clone(),
                    title: e.clone(),
                    text,
                    extra: others[..n_extra].iter().map(|o| (*o).clone()).collect(),
                });
            }
        }

        let world = SyntheticWorld {
            seed,
            entities,
            attribute_names,
            value_pools,
            attributes,
            templates,
            passages,
        };
        let vocab = world.surface_forms();
        if vocab.len() > config.vocab_cap {
            return Err(Error::Config(format!(
                "vocabulary overflow: world has {} surface forms, cap is {}",
                vocab.len(),
                config.vocab_cap
            )));
        }
        Ok(world)
    }

    /// Every distinct model token the world can emit.
    pub fn surface_forms(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        for p in &self.passages {
            set.extend(crate::text::tokenize(&p.text));
        }
        for t in self.templates.values() {
            set.extend(crate::text::tokenize(t).into_iter().filter(|w| !w.contains('{') && !w.contains('}')));
        }
        set.insert("supports".to_string());
        set.insert("refutes".to_string());
        set.extend(self.entities.iter().cloned());
        for pool in self.value_pools.values() {
            set.extend(pool.iter().cloned());
        }
        set
    }

    pub fn value(&self, entity: &str, attribute: &str) -> Option<&str> {
        self.attributes.get(entity)?.get(attribute).map(String::as_str)
    }

    pub fn corpus(&self) -> Vec<Passage> {
        self.passages
            .iter()
            .map(|p| Passage {
                pid: p.pid.clone(),
                title: p.title.clone(),
                text: p.text.clone(),
                rank: 0,
                score: 0.0,
            })
            .collect()
    }

    /// Recovers `(entity, attribute)` from a query produced by this world.
    pub fn parse_query(&self, query: &str) -> Option<(String, String)> {
        let toks = crate::text::tokenize(query);
        let attr = toks.iter().find(|t| self.attribute_names.contains(t))?;
        let ent = toks.iter().find(|t| self.attributes.contains_key(*t))?;
        Some((ent.clone(), attr.clone()))
    }

    pub fn query_text(&self, entity: &str, attribute: &str) -> String {
        fill(&self.templates["query"], attribute, entity, "")
    }

    pub fn statement_text(&self, entity: &str, attribute: &str, value: &str) -> String {
        fill(&self.templates["fact"], attribute, entity, value)
    }

    /// Passage text under an alternative value table.
    pub fn render(&self, p: &WorldPassage, values: &BTreeMap<String, BTreeMap<String, String>>) -> String {
        let facts = &values[&p.entity];
        let mut text = fill(&self.templates["fact"], &p.attribute, &p.entity, &facts[&p.attribute]);
        for o in &p.extra {
            text.push(' ');
            text.push_str(&fill(&self.templates["fact"], o, &p.entity, &facts[o]));
        }
        text
    }

    /// A fresh value for every (entity, attribute) pair.
    pub fn resample(&self, rng: &mut SeededRng) -> BTreeMap<String, BTreeMap<String, String>> {
        self.attributes
            .iter()
            .map(|(e, facts)| {
                let m = facts
                    .keys()
                    .map(|a| {
                        let pool = &self.value_pools[a];
                        (a.clone(), pool[rng.gen_range(0..pool.len())].clone())
                    })
                    .collect();
                (e.clone(), m)
            })
            .collect()
    }
}

fn fresh_name(
    rng: &mut SeededRng,
    syllables: usize,
    closing_consonant: bool,
    words: &mut BTreeSet<String>,
    names: &mut Vec<String>,
) -> Result<String> {
    for _ in 0..10_000 {
        let mut s = String::new();
        for _ in 0..syllables {
            s.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            s.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        if closing_consonant {
            s.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        }
        // No name may be a substring of another word (or contain one), so
        // string inclusion never fires on a partial word.
        let clash = words
            .iter()
            .any(|w| w.contains(s.as_str()) || s.contains(w.as_str()));
        if !clash {
            words.insert(s.clone());
            names.push(s.clone());
            return Ok(s);
        }
    }
    Err(Error::Config(
        "vocabulary overflow: cannot draw more distinct surface forms".to_string(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub world: SyntheticWorld,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

/// Builds the world and the three splits. Queried facts are disjoint across
/// splits; the output is a pure function of `(config, seed)`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    let world = SyntheticWorld::build(config, seed)?;

    let mut facts: Vec<(String, String)> = Vec::new();
    for e in &world.entities {
        for a in &world.attribute_names {
            facts.push((e.clone(), a.clone()));
        }
    }
    facts.shuffle(&mut stream(seed, "fact-split"));
    let total = (config.n_train + config.n_dev + config.n_test) as f64;
    let n = facts.len();
    let n_dev = ((n as f64 * config.n_dev as f64 / total) as usize).max(1);
    let n_test = ((n as f64 * config.n_test as f64 / total) as usize).max(1);
    let n_train = n - n_dev - n_test;
    if n_train == 0 {
        return Err(Error::Config("world too small for three disjoint fact pools".into()));
    }
    let train_pool = &facts[..n_train];
    let dev_pool = &facts[n_train..n_train + n_dev];
    let test_pool = &facts[n_train + n_dev..];

    let train = gen_split(&world, config, seed, "train", train_pool, config.n_train)?;
    let dev = gen_split(&world, config, seed, "dev", dev_pool, config.n_dev)?;
    let test = gen_split(&world, config, seed, "test", test_pool, config.n_test)?;
    Ok(SynthOutput {
        world,
        train,
        dev,
        test,
    })
}

fn gen_split(
    world: &SyntheticWorld,
    config: &SynthConfig,
    seed: u64,
    name: &str,
    pool: &[(String, String)],
    n: usize,
) -> Result<Vec<Example>> {
    let mut rng = stream(seed, &format!("split-{name}"));
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && i % pool.len() == 0 {
            order.shuffle(&mut rng);
        }
        let (entity, attribute) = &pool[order[i % pool.len()]];
        let resampled;
        let (values, texts): (&BTreeMap<String, BTreeMap<String, String>>, Vec<String>) = if config.resample_values {
            resampled = world.resample(&mut rng);
            let texts = world.passages.iter().map(|p| world.render(p, &resampled)).collect();
            (&resampled, texts)
        } else {
            (&world.attributes, world.passages.iter().map(|p| p.text.clone()).collect())
        };
        let truth = values[entity][attribute].clone();
        let is_fact = rng.gen_bool(config.fact_fraction);
        let (task_kind, query, gold) = if is_fact {
            let supports = rng.gen_bool(0.5);
            let stated = if supports {
                truth.clone()
            } else {
                let pool = &world.value_pools[attribute];
                let others: Vec<&String> = pool.iter().filter(|v| **v != truth).collect();
                others[rng.gen_range(0..others.len())].clone()
            };
            let verdict = if supports { SUPPORTS } else { REFUTES };
            (
                TaskKind::Fact,
                world.statement_text(entity, attribute, &stated),
                verdict.to_string(),
            )
        } else {
            (TaskKind::Qa, world.query_text(entity, attribute), truth.clone())
        };

        let passages = pick_passages(world, &texts, config, &mut rng, entity, attribute, &truth);
        let ex = Example {
            id: format!("{name}-{i:05}"),
            task_kind,
            query,
            gold_answers: alloc::vec![gold],
            passages,
            pseudo: None,
            silver: None,
        };
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

fn pick_passages(
    world: &SyntheticWorld,
    texts: &[String],
    config: &SynthConfig,
    rng: &mut SeededRng,
    entity: &str,
    attribute: &str,
    truth: &str,
) -> Vec<Passage> {
    let truth_v = alloc::vec![truth.to_string()];
    let gold_idx = world
        .passages
        .iter()
        .position(|p| p.entity == entity && p.attribute == attribute)
        .expect("every fact has a passage");
    let include_gold = !rng.gen_bool(config.distractor_rate);
    let clean = |i: usize| !contains_any(&texts[i], &truth_v);

    let mut chosen: Vec<usize> = Vec::new();
    if include_gold {
        chosen.push(gold_idx);
    }
    if chosen.len() < config.k && rng.gen_bool(config.hard_negative_rate) {
        let hard: Vec<usize> = (0..world.passages.len())
            .filter(|&i| {
                let p = &world.passages[i];
                p.entity == entity && p.attribute != attribute && clean(i)
            })
            .collect();
        if let Some(&h) = hard.choose(rng) {
            chosen.push(h);
        }
    }
    let mut same_attr: Vec<usize> = (0..world.passages.len())
        .filter(|&i| {
            let p = &world.passages[i];
            p.entity != entity && p.attribute == attribute && clean(i)
        })
        .collect();
    same_attr.shuffle(rng);
    for i in same_attr {
        if chosen.len() >= config.k {
            break;
        }
        chosen.push(i);
    }
    if chosen.len() < config.k {
        let mut rest: Vec<usize> = (0..world.passages.len())
            .filter(|&i| !chosen.contains(&i) && i != gold_idx && clean(i))
            .collect();
        rest.shuffle(rng);
        chosen.extend(rest.into_iter().take(config.k - chosen.len()));
    }
    chosen.shuffle(rng);

    // Simulated retriever scores: sorted uniforms, so the gold passage can sit
    // at any rank.
    let mut scores: Vec<f64> = (0..chosen.len()).map(|_| rng.gen::<f64>()).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    chosen
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(r, (&i, score))| {
            let p = &world.passages[i];
            Passage {
                pid: p.pid.clone(),
                title: p.title.clone(),
                text: texts[i].clone(),
                rank: r + 1,
                score: libm::round(score * 1e6) / 1e6,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

/// Number of distinct normalized unigrams shared by query and passage text.
pub fn overlap_score(query: &str, text: &str) -> usize {
    let q: BTreeSet<String> = normalized_tokens(query).into_iter().collect();
    let p: BTreeSet<String> = normalized_tokens(text).into_iter().collect();
    q.intersection(&p).count()
}

/// Top-`k` passages by unigram overlap, ties broken by ascending pid. Asking
/// for more passages than exist returns all of them, ranked.
pub fn retrieve_topk(query: &str, corpus: &[Passage], k: usize) -> Result<Vec<Passage>> {
    if k == 0 {
        return Err(Error::Precondition("retrieve_topk: k must be >= 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Precondition("retrieve_topk: corpus is empty".into()));
    }
    let mut scored: Vec<(usize, &Passage)> = corpus
        .iter()
        .map(|p| (overlap_score(query, &p.text), p))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.pid.cmp(&b.1.pid)));
    Ok(scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, (s, p))| Passage {
            rank: r + 1,
            score: s as f64,
            ..p.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn passage(pid: &str, text: &str) -> Passage {
        Passage {
            pid: pid.into(),
            title: pid.into(),
            text: text.into(),
            rank: 0,
            score: 0.0,
        }
    }

    fn small() -> SynthConfig {
        SynthConfig {
            n_entities: 12,
            n_train: 30,
            n_dev: 10,
            n_test: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn unique_match_ranks_first() {
        let mut corpus: Vec<Passage> = (0..10)
            .map(|i| passage(&format!("p{i}"), &format!("the capital of land{i} is town{i} .")))
            .collect();
        corpus[6] = passage("p6", "the capital of freedonia is fredville .");
        let got = retrieve_topk("capital of freedonia", &corpus, 3).unwrap();
        assert_eq!(got[0].pid, "p6");
        assert_eq!(got[0].rank, 1);
        assert_eq!(got.iter().map(|p| p.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn ties_break_by_pid() {
        let corpus = vec![passage("b", "alpha beta"), passage("a", "beta alpha")];
        let got = retrieve_topk("alpha", &corpus, 2).unwrap();
        assert_eq!(got[0].pid, "a");
        assert_eq!(got[1].pid, "b");
    }

    #[test]
    fn oversized_k_returns_everything() {
        let corpus = vec![passage("a", "x"), passage("b", "y")];
        assert_eq!(retrieve_topk("x", &corpus, 10).unwrap().len(), 2);
        assert!(retrieve_topk("x", &corpus, 0).is_err());
        assert!(retrieve_topk("x", &[], 1).is_err());
    }

    #[test]
    fn no_distractors_means_exactly_one_gold_passage() {
        let cfg = SynthConfig {
            distractor_rate: 0.0,
            ..small()
        };
        let out = synth_generate(&cfg, 3).unwrap();
        for ex in out.train.iter().chain(&out.dev).chain(&out.test) {
            assert_eq!(ex.k(), 5);
            let hits = ex
                .passages
                .iter()
                .filter(|p| contains_any(&p.text, &ex.gold_answers))
                .count();
            assert_eq!(hits, 1, "{}", ex.id);
        }
    }

    #[test]
    fn all_distractors_means_no_gold_passage() {
        let cfg = SynthConfig {
            distractor_rate: 1.0,
            ..small()
        };
        let out = synth_generate(&cfg, 3).unwrap();
        for ex in out.train.iter().chain(&out.dev) {
            assert!(ex.passages.iter().all(|p| !contains_any(&p.text, &ex.gold_answers)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(synth_generate(&small(), 7).unwrap(), synth_generate(&small(), 7).unwrap());
        assert_ne!(synth_generate(&small(), 7).unwrap().train, synth_generate(&small(), 8).unwrap().train);
    }

    #[test]
    fn splits_query_disjoint_facts() {
        let out = synth_generate(&small(), 1).unwrap();
        let train: BTreeSet<&str> = out.train.iter().map(|e| e.query.as_str()).collect();
        assert!(out.dev.iter().all(|e| !train.contains(e.query.as_str())));
    }

    #[test]
    fn fact_examples_carry_verdicts() {
        let cfg = SynthConfig {
            fact_fraction: 1.0,
            ..small()
        };
        let out = synth_generate(&cfg, 5).unwrap();
        assert!(out.train.iter().all(|e| e.task_kind == TaskKind::Fact));
        assert!(out.train.iter().any(|e| e.gold_answers[0] == SUPPORTS));
        assert!(out.train.iter().any(|e| e.gold_answers[0] == REFUTES));
    }

    #[test]
    fn vocab_cap_overflow_is_config_error() {
        let cfg = SynthConfig {
            vocab_cap: 10,
            ..small()
        };
        assert!(matches!(synth_generate(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn invariant_violations() {
        let ex = synth_generate(&small(), 1).unwrap().train.remove(0);
        ex.validate().unwrap();
        let mut bad = ex.clone();
        bad.passages[1].rank = bad.passages[0].rank;
        assert!(matches!(bad.validate(), Err(Error::Invariant { field: "passages.rank", .. })));
        let mut bad = ex.clone();
        bad.task_kind = TaskKind::Fact;
        bad.gold_answers = vec!["MAYBE".into()];
        assert!(matches!(bad.validate(), Err(Error::Invariant { field: "gold_answers", .. })));
        let mut bad = ex;
        bad.passages[0].text = " ".into();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn world_parses_its_own_queries() {
        let fixed = SynthConfig {
            resample_values: false,
            ..small()
        };
        let out = synth_generate(&fixed, 2).unwrap();
        let ex = &out.train[0];
        let (e, a) = out.world.parse_query(&ex.query).unwrap();
        assert_eq!(out.world.value(&e, &a).unwrap(), ex.gold_answers[0]);
    }

    #[test]
    fn resampled_values_stay_in_pool_and_vary() {
        let many = SynthConfig {
            n_train: 120,
            ..small()
        };
        let out = synth_generate(&many, 2).unwrap();
        let mut answers_per_fact: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for ex in &out.train {
            let (e, a) = out.world.parse_query(&ex.query).unwrap();
            assert!(out.world.value_pools[&a].contains(&ex.gold_answers[0]));
            answers_per_fact
                .entry(format!("{e}-{a}"))
                .or_default()
                .insert(ex.gold_answers[0].clone());
            let gold = ex.passages.iter().find(|p| p.pid == format!("{e}-{a}"));
            if let Some(p) = gold {
                assert!(contains_any(&p.text, &ex.gold_answers));
            }
        }
        assert!(answers_per_fact.values().any(|s| s.len() > 1));
    }
}
