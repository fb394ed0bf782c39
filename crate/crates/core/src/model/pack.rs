use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, SEP};
use crate::corpus::Example;
use crate::{Error, Result};

/// How passages reach the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// All passages and the pseudo-answer; no classification loss.
    Full,
    /// All passages and the pseudo-answer; joint generation + classification.
    E2e,
    /// Only passages whose silver label is 1 (rank-1 passage if none are).
    Silver,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::E2e => "e2e",
            Mode::Silver => "silver",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "e2e" => Ok(Mode::E2e),
            "silver" => Ok(Mode::Silver),
            _ => Err(Error::Config(format!("unknown mode `{s}` (full|e2e|silver)"))),
        }
    }
}

/// Token ranges of each field inside the packed sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanMap {
    pub query: Range<usize>,
    pub pseudo: Option<Range<usize>>,
    pub passages: Vec<Range<usize>>,
    /// Index into `Example::passages` for each passage span.
    pub passage_source: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldedInput {
    pub ids: Vec<usize>,
    pub spans: SpanMap,
    pub sep: usize,
}

impl FieldedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Packs `Q <sep> S <sep> p_1 <sep> ... <sep> p_K` (passages by rank) and
/// truncates to `max_len`: the longest passage loses a token first, then the
/// pseudo-answer; the query is never cut.
pub fn pack_input(example: &Example, vocab: &Vocab, mode: Mode, max_len: usize) -> Result<FieldedInput> {
    let query = vocab.encode(&example.query);
    if query.is_empty() {
        return Err(Error::Precondition(format!("example {}: empty query", example.id)));
    }
    let pseudo = example.pseudo.as_ref().ok_or_else(|| {
        Error::Precondition(format!(
            "example {} has no pseudo-answer; run the pseudo stage first",
            example.id
        ))
    })?;
    let mut pseudo_ids = vocab.encode(&pseudo.text);
    if pseudo_ids.is_empty() {
        pseudo_ids.push(super::vocab::UNK);
    }

    let mut order: Vec<usize> = (0..example.passages.len()).collect();
    order.sort_by_key(|&i| example.passages[i].rank);
    if mode == Mode::Silver {
        let silver = example.silver.as_ref().ok_or_else(|| {
            Error::Precondition(format!(
                "example {} has no silver labels; run the label stage first",
                example.id
            ))
        })?;
        let kept: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| silver.passage_labels[i] == 1)
            .collect();
        order = if kept.is_empty() { alloc::vec![order[0]] } else { kept };
    }
    let mut passages: Vec<Vec<usize>> = order
        .iter()
        .map(|&i| {
            let mut ids = vocab.encode(&example.passages[i].text);
            if ids.is_empty() {
                ids.push(super::vocab::UNK);
            }
            ids
        })
        .collect();

    let seps = passages.len() + 1;
    let total = |p: &[Vec<usize>], s: usize| query.len() + s + seps + p.iter().map(Vec::len).sum::<usize>();
    let mut s_len = pseudo_ids.len();
    while total(&passages, s_len) > max_len {
        // Longest passage first; among equals, the lowest-ranked one.
        let (idx, longest) = passages
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.len()))
            .fold((0, 0), |best, cur| if cur.1 >= best.1 { cur } else { best });
        if longest > 1 {
            passages[idx].pop();
        } else if s_len > 1 {
            s_len -= 1;
        } else {
            return Err(Error::Precondition(format!(
                "example {}: query of {} tokens does not fit max_input_len {max_len}",
                example.id,
                query.len()
            )));
        }
    }
    pseudo_ids.truncate(s_len);

    let mut ids = Vec::with_capacity(max_len);
    ids.extend_from_slice(&query);
    let q = 0..ids.len();
    ids.push(SEP);
    let s_start = ids.len();
    ids.extend_from_slice(&pseudo_ids);
    let s = s_start..ids.len();
    let mut spans = Vec::with_capacity(passages.len());
    for p in &passages {
        ids.push(SEP);
        let start = ids.len();
        ids.extend_from_slice(p);
        spans.push(start..ids.len());
    }
    Ok(FieldedInput {
        ids,
        spans: SpanMap {
            query: q,
            pseudo: Some(s),
            passages: spans,
            passage_source: order,
        },
        sep: SEP,
    })
}

/// `Q <sep> context` (or just `Q`), used for likelihood scoring. The context
/// is cut to fit; the query is not.
pub fn pack_query_context(query: &str, context: Option<&str>, vocab: &Vocab, max_len: usize) -> Result<FieldedInput> {
    let q = vocab.encode(query);
    if q.is_empty() {
        return Err(Error::Precondition("empty query".into()));
    }
    if q.len() > max_len {
        return Err(Error::Precondition(format!(
            "query of {} tokens does not fit max_input_len {max_len}",
            q.len()
        )));
    }
    let mut ids = q.clone();
    let mut passages = Vec::new();
    if let Some(c) = context {
        let mut c = vocab.encode(c);
        let room = max_len.saturating_sub(q.len() + 1);
        c.truncate(room);
        if !c.is_empty() {
            ids.push(SEP);
            let start = ids.len();
            ids.extend_from_slice(&c);
            passages.push(start..ids.len());
        }
    }
    Ok(FieldedInput {
        ids,
        spans: SpanMap {
            query: 0..q.len(),
            pseudo: None,
            passage_source: (0..passages.len()).collect(),
            passages,
        },
        sep: SEP,
    })
}

/// Classification targets for the packed spans: one per kept passage, then
/// the pseudo-answer. `None` when the example is unlabeled.
pub fn cls_targets(example: &Example, input: &FieldedInput) -> Option<Vec<usize>> {
    let silver = example.silver.as_ref()?;
    let mut t: Vec<usize> = input
        .spans
        .passage_source
        .iter()
        .map(|&i| usize::from(silver.passage_labels[i]))
        .collect();
    t.push(usize::from(silver.pseudo_label));
    Some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Passage, TaskKind};
    use crate::labeling::{LabelMethod, SilverLabels};
    use crate::pseudo::{PromptKind, PseudoAnswer, PseudoSource};
    use alloc::string::{String, ToString};
    use alloc::vec;

    fn example(passages: &[&str], labels: Option<Vec<u8>>) -> Example {
        Example {
            id: "x".into(),
            task_kind: TaskKind::Qa,
            query: "what is it ?".into(),
            gold_answers: vec!["a".into()],
            passages: passages
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    pid: alloc::format!("p{i}"),
                    title: String::new(),
                    text: t.to_string(),
                    rank: i + 1,
                    score: 1.0 - i as f64 * 0.1,
                })
                .collect(),
            pseudo: Some(PseudoAnswer {
                text: "maybe a".into(),
                prompt_kind: PromptKind::Concise,
                source: PseudoSource::Simulator,
            }),
            silver: labels.map(|l| SilverLabels {
                scores: l.iter().map(|&x| f64::from(x)).collect(),
                passage_labels: l,
                pseudo_label: 1,
                method: LabelMethod::Strinc,
                pseudo_score: 1.0,
            }),
        }
    }

    fn vocab() -> Vocab {
        Vocab::build(["what is it ? maybe a b c d e f g h"])
    }

    #[test]
    fn span_map_layout() {
        let ex = example(&["a b", "c d e"], None);
        let inp = pack_input(&ex, &vocab(), Mode::E2e, 64).unwrap();
        assert_eq!(inp.spans.passages.len(), 2);
        assert_eq!(inp.spans.query, 0..4);
        assert_eq!(inp.spans.pseudo, Some(5..7));
        assert_eq!(inp.spans.passages, vec![8..10, 11..14]);
        let seps = inp.ids.iter().filter(|&&t| t == SEP).count();
        let covered = 4 + 2 + 2 + 3;
        assert_eq!(seps + covered, inp.len());
    }

    #[test]
    fn silver_mode_filters_and_falls_back() {
        let ex = example(&["a", "b", "c"], Some(vec![0, 1, 0]));
        let inp = pack_input(&ex, &vocab(), Mode::Silver, 64).unwrap();
        assert_eq!(inp.spans.passage_source, vec![1]);
        let ex = example(&["a", "b", "c"], Some(vec![1, 0, 0]));
        assert_eq!(pack_input(&ex, &vocab(), Mode::Silver, 64).unwrap().spans.passages.len(), 1);
        let ex = example(&["a", "b", "c"], Some(vec![0, 0, 0]));
        assert_eq!(pack_input(&ex, &vocab(), Mode::Silver, 64).unwrap().spans.passage_source, vec![0]);
        let ex = example(&["a"], None);
        assert!(pack_input(&ex, &vocab(), Mode::Silver, 64).is_err());
    }

    #[test]
    fn truncation_trims_longest_passage_then_pseudo() {
        let ex = example(&["a b c d e f", "g h"], None);
        let inp = pack_input(&ex, &vocab(), Mode::Full, 12).unwrap();
        assert_eq!(inp.len(), 12);
        assert_eq!(inp.spans.query.len(), 4);
        assert_eq!(inp.spans.passages[0].len(), 2);
        assert_eq!(inp.spans.passages[1].len(), 1);
        let inp = pack_input(&ex, &vocab(), Mode::Full, 10).unwrap();
        assert_eq!(inp.spans.pseudo.as_ref().unwrap().len(), 1);
        assert!(pack_input(&ex, &vocab(), Mode::Full, 9).is_err());
    }

    #[test]
    fn empty_query_rejected() {
        let mut ex = example(&["a"], None);
        ex.query = " ".into();
        assert!(pack_input(&ex, &vocab(), Mode::Full, 64).is_err());
    }
}
