use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::Example;
use crate::text::tokenize;
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<eos>", "<sep>", "<unk>"];

/// Closed word-level vocabulary: reserved tokens first, then sorted words.
/// `<pad>` doubles as the decoder start token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Config("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(alloc::format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())))
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix is present")
    }

    /// Vocabulary over every text field of the given examples.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut texts: Vec<&str> = Vec::new();
        for ex in examples {
            texts.push(&ex.query);
            texts.extend(ex.gold_answers.iter().map(String::as_str));
            texts.extend(ex.passages.iter().map(|p| p.text.as_str()));
            if let Some(p) = &ex.pseudo {
                texts.push(&p.text);
            }
        }
        Self::build(texts)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Answer target: tokens followed by `<eos>`.
    pub fn encode_target(&self, text: &str) -> Vec<usize> {
        let mut v = self.encode(text);
        v.push(EOS);
        v
    }

    /// Joins non-reserved tokens with spaces, stopping at `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if id <= UNK || id >= self.tokens.len() {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&self.tokens[id]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_sorted_and_reserved_first() {
        let v = Vocab::build(["b a", "c ."]);
        assert_eq!(v.tokens()[..4], RESERVED);
        assert_eq!(&v.tokens()[4..], &[".", "a", "b", "c"]);
        assert_eq!(v.encode("A zzz"), alloc::vec![5, UNK]);
        assert_eq!(v.decode(&v.encode_target("a b")), "a b");
    }
}
