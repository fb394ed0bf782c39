//! Answer normalization, word-level tokenization and sentence splitting.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

/// Lowercase, drop ASCII punctuation, drop the articles "a", "an", "the" as
/// whole tokens, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let mut out = String::with_capacity(stripped.len());
    for tok in stripped
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Tokens of the normalized text.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(String::from)
        .collect()
}

/// Splits lowercase text into alphanumeric runs and single punctuation marks.
/// Returns each token with its byte range in the original string.
pub fn tokenize_with_spans(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            out.push((text[s..i].to_lowercase(), s..i));
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            out.push((text[i..end].to_lowercase(), i..end));
        }
    }
    if let Some(s) = start {
        out.push((text[s..].to_lowercase(), s..text.len()));
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|(t, _)| t).collect()
}

/// Splits on '.', '?' or '!' followed by whitespace (or end of text). Empty
/// pieces are dropped; the terminator stays with its sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'?' | b'!') {
            let at_end = i + 1 == bytes.len();
            let next_ws = !at_end && (bytes[i + 1] as char).is_ascii_whitespace();
            if at_end || next_ws {
                let s = text[start..=i].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = i + 1;
            }
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// True when any normalized gold answer occurs as a substring of the
/// normalized context. Empty normalized answers never match.
pub fn contains_any(context: &str, golds: &[String]) -> bool {
    let ctx = normalize_answer(context);
    golds.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && ctx.contains(g.as_str())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("The Eiffel Tower."), "eiffel tower");
        assert_eq!(normalize_answer("Paris"), normalize_answer("paris"));
        assert_eq!(normalize_answer("  an   apple,  a day "), "apple day");
        assert_eq!(normalize_answer("theatre"), "theatre");
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("What is the capital of Zorbia?"),
            vec!["what", "is", "the", "capital", "of", "zorbia", "?"]
        );
        let spans = tokenize_with_spans("ab, cd");
        assert_eq!(spans[1].1, 2..3);
        assert_eq!(spans[2].1, 4..6);
    }

    #[test]
    fn sentences() {
        assert_eq!(
            split_sentences("a b. c d? e! f"),
            vec!["a b.", "c d?", "e!", "f"]
        );
        assert_eq!(split_sentences("3.5 is a number."), vec!["3.5 is a number."]);
        assert!(split_sentences("  ").is_empty());
    }
}
