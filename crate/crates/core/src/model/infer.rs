//! Value-level forward passes over frozen weights.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::network::E2eModel;
use super::pack::{pack_query_context, FieldedInput, Mode, SpanMap};
use super::vocab::{EOS, PAD};
use crate::labeling::SequenceScorer;
use crate::numerics::{Graph, Tensor};
use crate::{Error, Result};

/// Encoder output together with the span map it was computed from. Both
/// heads read from the same object.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub states: Tensor,
    pub spans: SpanMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    /// Emitted tokens, including the final `<eos>` when one was produced.
    pub tokens: Vec<usize>,
    pub step_log_probs: Vec<f64>,
}

impl GenerationOutput {
    pub fn log_prob(&self) -> f64 {
        self.step_log_probs.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsPrediction {
    /// Probability that each passage contains the answer.
    pub epsilon: Vec<f64>,
    /// Same for the pseudo-answer.
    pub xi: f64,
    /// `(K + 1) x 2` logits, pseudo-answer last.
    pub logits: Tensor,
}

impl ClsPrediction {
    /// Predicted 0/1 label per passage, then the pseudo-answer.
    pub fn labels(&self) -> Vec<u8> {
        self.epsilon
            .iter()
            .chain(core::iter::once(&self.xi))
            .map(|&p| u8::from(p > 0.5))
            .collect()
    }
}

impl E2eModel {
    pub fn encode(&self, input: &FieldedInput) -> Result<EncoderStates> {
        let mut g = Graph::new();
        let e = self.encode_graph(&mut g, &input.ids)?;
        Ok(EncoderStates {
            states: g.value(e).clone(),
            spans: input.spans.clone(),
        })
    }

    pub fn encode_batch(&self, inputs: &[FieldedInput]) -> Result<Vec<EncoderStates>> {
        inputs.iter().map(|i| self.encode(i)).collect()
    }

    fn log_softmax_after(&self, enc: &EncoderStates, dec_in: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let e = g.input(enc.states.clone());
        let logits = self.decoder_logits(&mut g, e, dec_in)?;
        g.value(logits).log_softmax_rows()
    }

    /// Log-distribution over the next token after `prefix` (decoder start
    /// token excluded).
    pub fn next_token_log_probs(&self, enc: &EncoderStates, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut dec_in = alloc::vec![PAD];
        dec_in.extend_from_slice(prefix);
        let lp = self.log_softmax_after(enc, &dec_in)?;
        Ok(lp.row(lp.rows() - 1).to_vec())
    }

    /// Teacher-forced `log p(o_i | o_<i, input)` for each target position.
    pub fn step_log_probs(&self, enc: &EncoderStates, target: &[usize]) -> Result<Vec<f64>> {
        if target.last() != Some(&EOS) {
            return Err(Error::Precondition("target must be non-empty and end with <eos>".into()));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Precondition(format!(
                "target token {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let mut dec_in = alloc::vec![PAD];
        dec_in.extend_from_slice(&target[..target.len() - 1]);
        let lp = self.log_softmax_after(enc, &dec_in)?;
        Ok(target.iter().enumerate().map(|(i, &t)| lp.get(i, t)).collect())
    }

    pub fn seq_log_prob(&self, enc: &EncoderStates, target: &[usize]) -> Result<f64> {
        Ok(self.step_log_probs(enc, target)?.iter().sum())
    }

    /// Argmax decoding (lowest id wins ties) until `<eos>` or `max_len`.
    pub fn generate_greedy(&self, enc: &EncoderStates, max_len: usize) -> Result<GenerationOutput> {
        if max_len == 0 {
            return Err(Error::Precondition("max_len must be >= 1".into()));
        }
        let mut out = GenerationOutput {
            tokens: Vec::new(),
            step_log_probs: Vec::new(),
        };
        while out.tokens.len() < max_len {
            let lp = self.next_token_log_probs(enc, &out.tokens)?;
            let (best, &score) = lp
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |b, c| if *c.1 > *b.1 { c } else { b });
            out.tokens.push(best);
            out.step_log_probs.push(score);
            if best == EOS {
                break;
            }
        }
        Ok(out)
    }

    pub fn cls_forward(&self, enc: &EncoderStates) -> Result<ClsPrediction> {
        let mut g = Graph::new();
        let e = g.input(enc.states.clone());
        let l = self.cls_logits(&mut g, e, &enc.spans)?;
        let logits = g.value(l).clone();
        let probs = logits.softmax_rows()?;
        let k = enc.spans.passages.len();
        Ok(ClsPrediction {
            epsilon: (0..k).map(|i| probs.get(i, 1)).collect(),
            xi: probs.get(k, 1),
            logits,
        })
    }

    pub fn param_count(&self, trainable_only: bool) -> usize {
        self.params.count(trainable_only)
    }

    /// Packs, encodes and greedily decodes one example into answer text.
    pub fn answer(&self, example: &crate::corpus::Example, mode: Mode) -> Result<String> {
        let enc = self.encode(&self.pack(example, mode)?)?;
        let out = self.generate_greedy(&enc, self.config.max_output_len)?;
        Ok(self.vocab.decode(&out.tokens))
    }
}

impl SequenceScorer for E2eModel {
    fn answer_log_prob(&self, query: &str, context: Option<&str>, answer: &str) -> Result<f64> {
        let input = pack_query_context(query, context, &self.vocab, self.config.max_input_len)?;
        let (_, target) = self.teacher_forcing(answer)?;
        self.seq_log_prob(&self.encode(&input)?, &target)
    }
}
